#pragma once

// Stateful wrappers around the kernels in ops.hpp. A layer registers its
// parameters in a ParamStore and keeps the activations it needs for backward.
//
// Every layer has three entry points:
//   infer(store, x) const  - running statistics, nothing cached, store untouched
//   train(store, x)        - batch statistics, activations cached
//   backward(store, g)     - accumulates parameter gradients, returns dL/dx
// Composite layers share one dataflow for both modes through `forward_as`.

#include "cgnet/ops.hpp"
#include "cgnet/param_store.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <type_traits>

namespace cgnet {

enum class Activation { kReLU, kPReLU };

/// Dispatches to infer() for const layers and train() otherwise.
template <typename Layer, typename Store, typename Scalar>
Tensor<Scalar> forward_as(Layer& layer, Store& store, const Tensor<Scalar>& x) {
  if constexpr (std::is_const_v<Layer>)
    return layer.infer(store, x);
  else
    return layer.train(store, x);
}

/// Stores `value` into a cache slot only on the training path.
template <typename Self, typename Slot, typename Value>
void keep(Self& /*self*/, Slot& slot, Value&& value) {
  if constexpr (!std::is_const_v<Self>) slot = std::forward<Value>(value);
}

template <typename Scalar>
Tensor<Scalar> he_normal(Rng& rng, const Dims& dims, int fan_in) {
  return rand_normal<Scalar>(rng, dims, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

template <typename Scalar>
class Conv {
 public:
  using Store = ParamStore<Scalar>;

  Conv() = default;
  /// He-normal weights unless init_std > 0 asks for a fixed deviation.
  Conv(Store& store, const std::string& name, const ConvSpec& spec, Rng& rng, double init_std = 0.0) : spec_(spec) {
    spec.validate();
    const int fan_in = spec.in_per_group() * spec.kernel_h * spec.kernel_w;
    Tensor<Scalar> w = init_std > 0 ? rand_normal<Scalar>(rng, spec.weight_dims(), 0.0, init_std)
                                    : he_normal<Scalar>(rng, spec.weight_dims(), fan_in);
    w_ = store.add(name + ".weight", std::move(w), ParamKind::kWeight);
    if (spec.has_bias) b_ = store.add(name + ".bias", Tensor<Scalar>(Dims{spec.out_channels}), ParamKind::kWeight);
  }

  const ConvSpec& spec() const { return spec_; }
  typename Store::Index weight() const { return w_; }

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const {
    return conv2d_forward(x, s.value(w_), b_ ? &s.value(*b_) : nullptr, spec_);
  }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) {
    x_ = x;
    return infer(s, x);
  }
  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g, bool need_grad_x = true) {
    auto grads = conv2d_backward(g, x_, s.value(w_), spec_, need_grad_x);
    s.accumulate_grad(w_, grads.w);
    if (b_) s.accumulate_grad(*b_, *grads.b);
    return std::move(grads.x);
  }

 private:
  ConvSpec spec_;
  typename Store::Index w_ = 0;
  std::optional<typename Store::Index> b_;
  Tensor<Scalar> x_;
};

template <typename Scalar>
class BatchNorm {
 public:
  using Store = ParamStore<Scalar>;

  BatchNorm() = default;
  BatchNorm(Store& store, const std::string& name, int channels, BatchNormOptions opt = {}) : opt_(opt) {
    const Dims d{channels};
    gamma_ = store.add(name + ".gamma", Tensor<Scalar>(d, Scalar(1)), ParamKind::kNoDecay);
    beta_ = store.add(name + ".beta", Tensor<Scalar>(d), ParamKind::kNoDecay);
    mean_ = store.add(name + ".running_mean", Tensor<Scalar>(d), ParamKind::kBuffer);
    var_ = store.add(name + ".running_var", Tensor<Scalar>(d, Scalar(1)), ParamKind::kBuffer);
  }

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const {
    return batchnorm_forward_infer(x, s.value(gamma_), s.value(beta_), s.value(mean_), s.value(var_), opt_);
  }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) {
    return batchnorm_forward_train(x, s.value(gamma_), s.value(beta_), s.value(mean_), s.value(var_), opt_, &saved_);
  }
  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g) {
    auto grads = batchnorm_backward(g, saved_, s.value(gamma_));
    s.accumulate_grad(gamma_, grads.gamma);
    s.accumulate_grad(beta_, grads.beta);
    return std::move(grads.x);
  }

 private:
  BatchNormOptions opt_;
  typename Store::Index gamma_ = 0, beta_ = 0, mean_ = 0, var_ = 0;
  BatchNormSaved<Scalar> saved_;
};

template <typename Scalar>
class Act {
 public:
  using Store = ParamStore<Scalar>;

  Act() = default;
  Act(Store& store, const std::string& name, int channels, Activation kind) : kind_(kind) {
    if (kind == Activation::kPReLU)
      slope_ = store.add(name + ".slope", Tensor<Scalar>(Dims{channels}, Scalar(0.25)), ParamKind::kNoDecay);
  }

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const {
    return slope_ ? prelu_forward(x, s.value(*slope_)) : relu_forward(x);
  }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) {
    x_ = x;
    return infer(s, x);
  }
  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g) {
    if (!slope_) return relu_backward(g, x_);
    auto grads = prelu_backward(g, x_, s.value(*slope_));
    s.accumulate_grad(*slope_, grads.slope);
    return std::move(grads.x);
  }

 private:
  Activation kind_ = Activation::kPReLU;
  std::optional<typename Store::Index> slope_;
  Tensor<Scalar> x_;
};

/// BN followed by the configured activation.
template <typename Scalar>
class BnAct {
 public:
  using Store = ParamStore<Scalar>;

  BnAct() = default;
  BnAct(Store& store, const std::string& name, int channels, Activation act)
      : bn_(store, name + ".bn", channels), act_(store, name + ".act", channels, act) {}

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const { return flow(*this, s, x); }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) { return flow(*this, s, x); }
  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g) { return bn_.backward(s, act_.backward(s, g)); }

 private:
  template <typename Self, typename S>
  static Tensor<Scalar> flow(Self& self, S& s, const Tensor<Scalar>& x) {
    return forward_as(self.act_, s, forward_as(self.bn_, s, x));
  }

  BatchNorm<Scalar> bn_;
  Act<Scalar> act_;
};

/// Conv (no bias) -> BN -> activation.
template <typename Scalar>
class ConvBnAct {
 public:
  using Store = ParamStore<Scalar>;

  ConvBnAct() = default;
  ConvBnAct(Store& store, const std::string& name, const ConvSpec& spec, Activation act, Rng& rng)
      : conv_(store, name + ".conv", spec, rng), bn_act_(store, name, spec.out_channels, act) {}

  const ConvSpec& spec() const { return conv_.spec(); }

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const { return flow(*this, s, x); }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) { return flow(*this, s, x); }
  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g, bool need_grad_x = true) {
    return conv_.backward(s, bn_act_.backward(s, g), need_grad_x);
  }

 private:
  template <typename Self, typename S>
  static Tensor<Scalar> flow(Self& self, S& s, const Tensor<Scalar>& x) {
    return forward_as(self.bn_act_, s, forward_as(self.conv_, s, x));
  }

  Conv<Scalar> conv_;
  BnAct<Scalar> bn_act_;
};

template <typename Scalar>
class Affine {
 public:
  using Store = ParamStore<Scalar>;

  Affine() = default;
  Affine(Store& store, const std::string& name, int in, int out, Rng& rng) {
    w_ = store.add(name + ".weight", he_normal<Scalar>(rng, Dims{out, in}, in), ParamKind::kWeight);
    b_ = store.add(name + ".bias", Tensor<Scalar>(Dims{out}), ParamKind::kWeight);
  }

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const { return affine_forward(x, s.value(w_), s.value(b_)); }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) {
    x_ = x;
    return infer(s, x);
  }
  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g) {
    auto grads = affine_backward(g, x_, s.value(w_));
    s.accumulate_grad(w_, grads.w);
    s.accumulate_grad(b_, grads.b);
    return std::move(grads.x);
  }

 private:
  typename Store::Index w_ = 0, b_ = 0;
  Tensor<Scalar> x_;
};

/// Channel gate: global average pool -> affine -> ReLU -> affine -> sigmoid,
/// applied as a per-channel scale of its own input.
template <typename Scalar>
class GlobalContext {
 public:
  using Store = ParamStore<Scalar>;

  GlobalContext() = default;
  GlobalContext(Store& store, const std::string& name, int channels, int reduction, Rng& rng)
      : fc1_(store, name + ".fc1", channels, channels / reduction, rng),
        fc2_(store, name + ".fc2", channels / reduction, channels, rng) {}

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const { return flow(*this, s, x); }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) { return flow(*this, s, x); }

  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g) {
    // y = x * gate(x): both the scaled path and the gate path reach x.
    Tensor<Scalar> gx = scale_channels(g, gate_);
    Tensor<Scalar> g_gate(gate_.dims());
    const std::size_t hw = x_.plane_size();
    for (int n = 0; n < x_.n(); ++n)
      for (int c = 0; c < x_.c(); ++c) {
        const Scalar* gp = g.plane(n, c);
        const Scalar* xp = x_.plane(n, c);
        Scalar acc = 0;
        for (std::size_t k = 0; k < hw; ++k) acc += gp[k] * xp[k];
        g_gate[static_cast<std::size_t>(n) * x_.c() + c] = acc;
      }
    Tensor<Scalar> g_hidden = relu_backward(fc2_.backward(s, sigmoid_backward(g_gate, gate_)), hidden_);
    Tensor<Scalar> g_pooled = fc1_.backward(s, g_hidden);
    add_inplace(gx, global_avg_pool_backward(g_pooled, x_.dims()));
    return gx;
  }

 private:
  template <typename Self, typename S>
  static Tensor<Scalar> flow(Self& self, S& s, const Tensor<Scalar>& x) {
    Tensor<Scalar> hidden = forward_as(self.fc1_, s, global_avg_pool_forward(x));
    Tensor<Scalar> gate = sigmoid_forward(forward_as(self.fc2_, s, relu_forward(hidden)));
    Tensor<Scalar> y = scale_channels(x, gate);
    keep(self, self.x_, x);
    keep(self, self.hidden_, std::move(hidden));
    keep(self, self.gate_, std::move(gate));
    return y;
  }

  Affine<Scalar> fc1_, fc2_;
  Tensor<Scalar> x_, hidden_, gate_;
};

}  // namespace cgnet
