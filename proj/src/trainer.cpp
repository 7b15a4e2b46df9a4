#include "cgnet/trainer.hpp"

#include "cgnet/augment.hpp"
#include "cgnet/errors.hpp"

#include <cmath>
#include <cstdio>

namespace cgnet {

std::string format_log_line(const LogRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g", r.iter, r.lr, r.loss);
  return buf;
}

Batch make_batch(const std::vector<Sample>& data, const TrainConfig& cfg, int iter, int attempt) {
  detail::require(!data.empty(), "training set is empty");
  const int B = cfg.batch_size, crop = cfg.crop;
  Batch b{Tensor<float>(Dims{B, 3, crop, crop}), Labels(B, crop, crop)};
  const auto it = static_cast<std::uint64_t>(iter);
  Rng pick = Rng::substream(cfg.seed, it, static_cast<std::uint64_t>(attempt) * 1000003u);
  const std::size_t plane = static_cast<std::size_t>(crop) * crop;
  for (int slot = 0; slot < B; ++slot) {
    const auto& sample = data[pick.below(static_cast<std::uint32_t>(data.size()))];
    Rng rng = Rng::substream(cfg.seed, it, static_cast<std::uint64_t>(attempt) * 1000003u + static_cast<std::uint64_t>(slot) + 1);
    const Sample a = augment(sample, rng, cfg);
    for (int c = 0; c < 3; ++c) std::copy(a.image.plane(0, c), a.image.plane(0, c) + plane, b.image.plane(slot, c));
    std::copy(a.labels.v.begin(), a.labels.v.end(), b.labels.v.begin() + static_cast<std::ptrdiff_t>(slot * plane));
  }
  return b;
}

Trainer::Trainer(CGNet<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg, TrainState state)
    : model_(model), data_(data), cfg_(cfg), state_(state) {
  cfg_.validate();
  detail::require(!data.empty(), "training set is empty");
  detail::require(state.iter >= 0 && state.iter <= cfg.max_iter,
                  "resume iteration " + std::to_string(state.iter) + " outside [0, max_iter]");
  adam_.t = state.adam_t;
}

LogRecord Trainer::step() {
  detail::require(!done(), "Trainer::step: already at max_iter");
  const int iter = state_.iter;
  const double lr = poly_lr(iter, cfg_);
  double loss = 0;
  for (int attempt = 0;; ++attempt) {
    Batch b = make_batch(data_, cfg_, iter, attempt);
    Tensor<float> scores = model_.train(b.image);
    LossResult<float> res;
    try {
      res = softmax_ce_masked(scores, b.labels, cfg_.ignore_index, cfg_.loss_reduction);
    } catch (const AllIgnoredError&) {
      if (attempt == 0) continue;
      throw;
    }
    if (!std::isfinite(res.loss)) throw NonFiniteError("loss became non-finite at iteration " + std::to_string(iter));
    model_.backward(res.grad);
    loss = res.loss;
    break;
  }
  adam_step(model_.store(), adam_, lr, cfg_);
  state_.adam_t = adam_.t;
  state_.iter = iter + 1;
  return {iter, lr, loss};
}

TrainState train_loop(CGNet<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg, TrainState state,
                      const TrainHooks& hooks) {
  Trainer t(model, data, cfg, state);
  while (!t.done() && (hooks.stop_at < 0 || t.state().iter < hooks.stop_at)) {
    const LogRecord r = t.step();
    if (hooks.on_record) hooks.on_record(r);
    if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 && t.state().iter % cfg.checkpoint_interval == 0 && !t.done())
      hooks.on_checkpoint(t.state());
  }
  return t.state();
}

}  // namespace cgnet
