#include "cgnet/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cgnet {

void TrainConfig::validate() const {
  detail::require(base_lr > 0, "TrainConfig: base_lr must be > 0");
  detail::require(power >= 0, "TrainConfig: power must be >= 0");
  detail::require(max_iter >= 1, "TrainConfig: max_iter must be >= 1");
  detail::require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  detail::require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "TrainConfig: betas must be in [0,1)");
  detail::require(weight_decay >= 0 && adam_eps > 0, "TrainConfig: weight_decay must be >= 0 and adam_eps > 0");
  detail::require(crop >= 8 && crop % 8 == 0, "TrainConfig: crop must be a positive multiple of 8, got " + std::to_string(crop));
  detail::require(!scales.empty(), "TrainConfig: scale set must be non-empty");
  for (double s : scales) detail::require(s > 0, "TrainConfig: scales must be positive");
  detail::require(checkpoint_interval >= 0, "TrainConfig: checkpoint_interval must be >= 0");
}

double poly_lr(int iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.max_iter)
    throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) + " outside [0, " + std::to_string(cfg.max_iter) + "]");
  return cfg.base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter), cfg.power);
}

}  // namespace cgnet
