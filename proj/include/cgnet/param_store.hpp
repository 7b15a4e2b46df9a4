#pragma once

#include "cgnet/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cgnet {

enum class ParamKind {
  kWeight,  // learnable, weight decay applies
  kNoDecay, // learnable, exempt from weight decay (BN affine, PReLU slopes)
  kBuffer,  // not learnable (BN running statistics)
};

template <typename Scalar>
struct Param {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> adam_m;
  Tensor<Scalar> adam_v;

  bool learnable() const { return kind != ParamKind::kBuffer; }
};

/// Named tensors in insertion order. Layers refer to entries by index.
template <typename Scalar>
class ParamStore {
 public:
  using Index = std::size_t;

  Index add(const std::string& name, Tensor<Scalar> value, ParamKind kind) {
    if (index_.count(name) != 0) throw std::invalid_argument("ParamStore: duplicate name '" + name + "'");
    Param<Scalar> p;
    p.name = name;
    p.kind = kind;
    if (kind != ParamKind::kBuffer) {
      p.grad = Tensor<Scalar>(value.dims());
      p.adam_m = Tensor<Scalar>(value.dims());
      p.adam_v = Tensor<Scalar>(value.dims());
    }
    p.value = std::move(value);
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(p));
    return entries_.size() - 1;
  }

  Param<Scalar>& operator[](Index i) { return entries_.at(i); }
  const Param<Scalar>& operator[](Index i) const { return entries_.at(i); }

  Tensor<Scalar>& value(Index i) { return entries_.at(i).value; }
  const Tensor<Scalar>& value(Index i) const { return entries_.at(i).value; }

  /// Adds g into the gradient buffer of entry i.
  void accumulate_grad(Index i, const Tensor<Scalar>& g) {
    Param<Scalar>& p = entries_.at(i);
    if (!(p.grad.dims() == g.dims()))
      throw std::invalid_argument("ParamStore: gradient " + g.dims().str() + " for '" + p.name + "' " + p.value.dims().str());
    p.grad.array() += g.array();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Index find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no entry named '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& p : entries_)
      if (p.learnable()) p.grad.set_zero();
  }

  /// Number of learnable scalars; buffers excluded.
  std::size_t learnable_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_)
      if (p.learnable()) n += p.value.size();
    return n;
  }

  /// FNV-1a over names and value bytes; used to detect mutation.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& p : entries_) {
      mix(p.name.data(), p.name.size());
      mix(p.value.data(), p.value.size() * sizeof(Scalar));
    }
    return h;
  }

 private:
  std::vector<Param<Scalar>> entries_;
  std::unordered_map<std::string, Index> index_;
};

}  // namespace cgnet
