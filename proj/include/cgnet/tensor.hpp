#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgnet {

/// Shape of a dense tensor: 1 to 4 positive extents, N,C,H,W order for rank 4.
struct Dims {
  std::array<int, 4> ext{1, 1, 1, 1};
  int rank = 0;

  Dims() = default;
  Dims(std::initializer_list<int> extents);
  explicit Dims(const std::vector<int>& extents);

  int operator[](int i) const { return ext[static_cast<std::size_t>(i)]; }
  std::size_t numel() const;
  std::string str() const;

  friend bool operator==(const Dims& a, const Dims& b) {
    if (a.rank != b.rank) return false;
    for (int i = 0; i < a.rank; ++i)
      if (a[i] != b[i]) return false;
    return true;
  }
};

/// Dense row-major tensor. Storage is an Eigen column array so elementwise
/// math composes as Eigen expressions.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using scalar_type = Scalar;

  Tensor() = default;
  explicit Tensor(const Dims& dims) : dims_(dims), data_(Array::Zero(static_cast<Eigen::Index>(dims.numel()))) {}
  Tensor(const Dims& dims, Scalar value)
      : dims_(dims), data_(Array::Constant(static_cast<Eigen::Index>(dims.numel()), value)) {}
  Tensor(const Dims& dims, Array data) : dims_(dims), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != dims_.numel())
      throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                  " does not match dims " + dims_.str());
  }

  const Dims& dims() const { return dims_; }
  int rank() const { return dims_.rank; }
  int dim(int i) const { return dims_[i]; }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // Rank-4 accessors.
  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(dims_[2]) * static_cast<std::size_t>(dims_[3]); }
  Scalar* plane(int n, int c) { return data() + (static_cast<std::size_t>(n) * dims_[1] + c) * plane_size(); }
  const Scalar* plane(int n, int c) const {
    return data() + (static_cast<std::size_t>(n) * dims_[1] + c) * plane_size();
  }
  Scalar& at(int n, int c, int h, int w) { return plane(n, c)[static_cast<std::size_t>(h) * dims_[3] + w]; }
  Scalar at(int n, int c, int h, int w) const { return plane(n, c)[static_cast<std::size_t>(h) * dims_[3] + w]; }

  void fill(Scalar v) { data_.setConstant(v); }
  void set_zero() { data_.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(dims_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Dims dims_;
  Array data_;
};

/// Integer label map [N,H,W]; values in [0,K) or the ignore label.
struct Labels {
  int n = 0, h = 0, w = 0;
  std::vector<std::int32_t> v;

  Labels() = default;
  Labels(int n_, int h_, int w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * h_ * w_, fill) {}
  std::int32_t& at(int b, int i, int j) { return v[(static_cast<std::size_t>(b) * h + i) * w + j]; }
  std::int32_t at(int b, int i, int j) const { return v[(static_cast<std::size_t>(b) * h + i) * w + j]; }
  std::size_t size() const { return v.size(); }
};

inline constexpr std::int32_t kIgnoreLabel = 255;

/// PCG32 (XSH-RR, 64-bit state, selectable stream).
class Rng {
 public:
  static constexpr std::uint64_t kDefaultStream = 0xda3e39cb94b95bdbULL;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = kDefaultStream);

  std::uint32_t next_u32();
  /// Uniform in [0,1): next_u32() / 2^32.
  double uniform() { return static_cast<double>(next_u32()) / 4294967296.0; }
  /// Unbiased integer in [0, bound).
  std::uint32_t below(std::uint32_t bound);

  /// Independent generator for the (seed, a, b) coordinate; used to give every
  /// iteration and batch slot its own reproducible stream.
  static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t state() const { return state_; }
  std::uint64_t increment() const { return inc_; }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

// ---------------------------------------------------------------------------
// Construction

template <typename Scalar>
Tensor<Scalar> zeros(const Dims& dims) {
  return Tensor<Scalar>(dims);
}

template <typename Scalar>
Tensor<Scalar> full(const Dims& dims, Scalar value) {
  return Tensor<Scalar>(dims, value);
}

/// Box-Muller over pairs of PCG32 uniforms; always consumes 2*ceil(n/2) draws.
template <typename Scalar>
Tensor<Scalar> rand_normal(Rng& rng, const Dims& dims, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw std::invalid_argument("rand_normal: negative std");
  Tensor<Scalar> out(dims);
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; i += 2) {
    const double u1 = 1.0 - rng.uniform();  // (0,1]
    const double u2 = rng.uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    out[i] = static_cast<Scalar>(mean + stddev * radius * std::cos(kTwoPi * u2));
    if (i + 1 < n) out[i + 1] = static_cast<Scalar>(mean + stddev * radius * std::sin(kTwoPi * u2));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape algebra and elementwise arithmetic

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename Scalar>
void debug_check_finite([[maybe_unused]] const Tensor<Scalar>& t, [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!t.all_finite()) throw std::runtime_error(std::string(where) + ": non-finite value produced");
#endif
}
}  // namespace detail

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.rank() == 4 && b.rank() == 4, "concat_channels: rank-4 inputs required");
  detail::require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
                  "concat_channels: N/H/W mismatch " + a.dims().str() + " vs " + b.dims().str());
  Tensor<Scalar> out(Dims{a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t block_a = static_cast<std::size_t>(a.c()) * a.plane_size();
  const std::size_t block_b = static_cast<std::size_t>(b.c()) * b.plane_size();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.plane(n, 0), block_a, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), block_b, out.plane(n, a.c()));
  }
  return out;
}

/// Channels [begin, end) of a rank-4 tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, int begin, int end) {
  detail::require(x.rank() == 4 && 0 <= begin && begin < end && end <= x.c(), "slice_channels: bad range");
  Tensor<Scalar> out(Dims{x.n(), end - begin, x.h(), x.w()});
  const std::size_t block = static_cast<std::size_t>(end - begin) * x.plane_size();
  for (int n = 0; n < x.n(); ++n) std::copy_n(x.plane(n, begin), block, out.plane(n, 0));
  return out;
}

/// out[n,c,:,:] = x[n,c,:,:] * g[n,c]
template <typename Scalar>
Tensor<Scalar> scale_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& g) {
  detail::require(x.rank() == 4 && g.rank() == 2, "scale_channels: expects x [N,C,H,W] and g [N,C]");
  detail::require(g.dim(0) == x.n() && g.dim(1) == x.c(),
                  "scale_channels: gate " + g.dims().str() + " does not match " + x.dims().str());
  Tensor<Scalar> out(x.dims());
  const auto hw = static_cast<Eigen::Index>(x.plane_size());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> src(x.plane(n, c), hw);
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dst(out.plane(n, c), hw);
      dst = src * g[static_cast<std::size_t>(n) * x.c() + c];
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.dims() == b.dims(), "add: shape mismatch " + a.dims().str() + " vs " + b.dims().str());
  Tensor<Scalar> out(a.dims(), a.array() + b.array());
  detail::debug_check_finite(out, "add");
  return out;
}

template <typename Scalar>
void add_inplace(Tensor<Scalar>& acc, const Tensor<Scalar>& b) {
  detail::require(acc.dims() == b.dims(), "add_inplace: shape mismatch " + acc.dims().str() + " vs " + b.dims().str());
  acc.array() += b.array();
}

}  // namespace cgnet
