#pragma once

#include "cgnet/dataio.hpp"
#include "cgnet/optim.hpp"

namespace cgnet {

/// Bilinear resize of every channel plane (half-pixel-centred sampling).
Tensor<float> resize_bilinear(const Tensor<float>& image, int out_h, int out_w);
/// Nearest-neighbour resize of a label map.
Labels resize_nearest(const Labels& labels, int out_h, int out_w);
/// Horizontal flip: column j maps to W-1-j.
Tensor<float> mirror(const Tensor<float>& image);
Labels mirror(const Labels& labels);

/// Training augmentation in fixed order:
///   1. random scale from cfg.scales (image bilinear, labels nearest)
///   2. horizontal mirror with probability 1/2 (if cfg.mirror)
///   3. per-channel mean subtraction
///   4. pad bottom/right to at least crop x crop (image 0, labels ignore),
///      then a uniform random crop x crop window
/// Draws from rng in that order: scale index, mirror bit, crop row, crop column.
Sample augment(const Sample& sample, Rng& rng, const TrainConfig& cfg);

}  // namespace cgnet
