#pragma once

#include "cgnet/checkpoint.hpp"
#include "cgnet/dataio.hpp"
#include "cgnet/optim.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace cgnet {

struct LogRecord {
  int iter = 0;
  double lr = 0;
  double loss = 0;
};

/// `iter<TAB>lr<TAB>loss`, 9 significant digits.
std::string format_log_line(const LogRecord& r);

/// Batch of augmented crops: image [B,3,crop,crop], labels Bxcropxcrop.
struct Batch {
  Tensor<float> image;
  Labels labels;
};

/// Draws the batch for an iteration. Sample indices come from a
/// substream of (seed, iter, attempt) and every slot has its own augmentation
/// substream, so the batch depends only on those and the dataset.
Batch make_batch(const std::vector<Sample>& data, const TrainConfig& cfg, int iter, int attempt);

/// Runs iterations state.iter .. max_iter-1 (or up to stop_at when >= 0).
/// Each iteration samples a batch, runs train forward, masked CE, backward and an
/// ADAM step at poly_lr(iter). A batch with no valid pixel is redrawn once;
/// a second one aborts with AllIgnoredError. A non-finite loss aborts with
/// NonFiniteError.
class Trainer {
 public:
  Trainer(CGNet<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg, TrainState state);

  bool done() const { return state_.iter >= cfg_.max_iter; }
  LogRecord step();
  const TrainState& state() const { return state_; }

 private:
  CGNet<float>& model_;
  const std::vector<Sample>& data_;
  TrainConfig cfg_;
  TrainState state_;
  AdamState adam_;
};

struct TrainHooks {
  std::function<void(const LogRecord&)> on_record;
  /// Called with the completed-iteration count at every checkpoint interval.
  std::function<void(const TrainState&)> on_checkpoint;
  int stop_at = -1;
};

/// Drives a Trainer to completion; returns the final state.
TrainState train_loop(CGNet<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg, TrainState state,
                      const TrainHooks& hooks = {});

}  // namespace cgnet
