#pragma once

#include "cgnet/ops.hpp"
#include "cgnet/param_store.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace cgnet {

/// Optimization and augmentation settings. Defaults are the full-scale protocol.
struct TrainConfig {
  double base_lr = 0.001;
  double power = 0.9;
  int max_iter = 60000;
  int batch_size = 14;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0005;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  int crop = 680;
  std::vector<double> scales{0.5, 0.75, 1.0, 1.5, 1.75, 2.0};
  bool mirror = true;
  std::array<float, 3> means{0.f, 0.f, 0.f};
  std::int32_t ignore_index = kIgnoreLabel;
  LossReduction loss_reduction = LossReduction::kMean;
  int checkpoint_interval = 0;  // 0 disables interval checkpoints

  void validate() const;
};

/// base_lr * (1 - iter / max_iter)^power
double poly_lr(int iter, const TrainConfig& cfg);

struct AdamState {
  std::uint64_t t = 0;
};

/// One ADAM update with L2 weight decay folded into the gradient (BN affine
/// parameters and PReLU slopes are exempt). Gradients are zeroed afterwards.
/// Throws NonFiniteError naming the parameter if a gradient is NaN/Inf.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, AdamState& state, double lr, const TrainConfig& cfg) {
  for (const auto& p : store)
    if (p.learnable() && !p.grad.all_finite()) throw NonFiniteError("adam_step: non-finite gradient in '" + p.name + "'");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const auto c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const auto c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const auto step = static_cast<Scalar>(lr), eps = static_cast<Scalar>(cfg.adam_eps);
  for (auto& p : store) {
    if (!p.learnable()) continue;
    auto& theta = p.value.array();
    typename Tensor<Scalar>::Array g = p.grad.array();
    if (p.kind == ParamKind::kWeight && cfg.weight_decay != 0.0) g += static_cast<Scalar>(cfg.weight_decay) * theta;
    auto& m = p.adam_m.array();
    auto& v = p.adam_v.array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    theta -= step * (m * c1) / ((v * c2).sqrt() + eps);
    p.grad.set_zero();
  }
}

}  // namespace cgnet
