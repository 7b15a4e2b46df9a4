#include "cgnet/augment.hpp"

#include "cgnet/ops.hpp"

#include <cassert>
#include <cmath>

namespace cgnet {

Tensor<float> resize_bilinear(const Tensor<float>& image, int out_h, int out_w) {
  detail::require(out_h >= 1 && out_w >= 1, "resize_bilinear: empty output");
  Tensor<float> out(Dims{image.n(), image.c(), out_h, out_w});
  const auto rows = bilinear_taps(image.h(), out_h), cols = bilinear_taps(image.w(), out_w);
  for (int n = 0; n < image.n(); ++n)
    for (int c = 0; c < image.c(); ++c)
      bilinear_resize_plane(image.plane(n, c), image.h(), image.w(), out.plane(n, c), out_h, out_w, rows, cols);
  return out;
}

Labels resize_nearest(const Labels& labels, int out_h, int out_w) {
  detail::require(out_h >= 1 && out_w >= 1, "resize_nearest: empty output");
  Labels out(labels.n, out_h, out_w);
  auto src = [](int i, int in, int out_len) {
    const int s = static_cast<int>(std::floor((i + 0.5) * in / out_len));
    return std::min(s, in - 1);
  };
  for (int b = 0; b < labels.n; ++b)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) out.at(b, i, j) = labels.at(b, src(i, labels.h, out_h), src(j, labels.w, out_w));
  return out;
}

Tensor<float> mirror(const Tensor<float>& image) {
  Tensor<float> out(image.dims());
  const int W = image.w();
  for (int n = 0; n < image.n(); ++n)
    for (int c = 0; c < image.c(); ++c)
      for (int i = 0; i < image.h(); ++i)
        for (int j = 0; j < W; ++j) out.at(n, c, i, j) = image.at(n, c, i, W - 1 - j);
  return out;
}

Labels mirror(const Labels& labels) {
  Labels out(labels.n, labels.h, labels.w);
  for (int b = 0; b < labels.n; ++b)
    for (int i = 0; i < labels.h; ++i)
      for (int j = 0; j < labels.w; ++j) out.at(b, i, j) = labels.at(b, i, labels.w - 1 - j);
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const TrainConfig& cfg) {
  detail::require(sample.image.rank() == 4 && sample.image.n() == 1 && sample.image.c() == 3,
                  "augment: image must be [1,3,H,W]");
  detail::require(sample.labels.h == sample.image.h() && sample.labels.w == sample.image.w(), "augment: label size mismatch");

  const double scale = cfg.scales[rng.below(static_cast<std::uint32_t>(cfg.scales.size()))];
  Tensor<float> image = sample.image;
  Labels labels = sample.labels;
  if (scale != 1.0) {
    const int h = std::max(1, static_cast<int>(std::lround(image.h() * scale)));
    const int w = std::max(1, static_cast<int>(std::lround(image.w() * scale)));
    image = resize_bilinear(image, h, w);
    labels = resize_nearest(labels, h, w);
  }

  const bool flip = (rng.next_u32() & 1u) != 0;
  if (cfg.mirror && flip) {
    image = mirror(image);
    labels = mirror(labels);
  }

  const int H = image.h(), W = image.w();
  const int Hp = std::max(H, cfg.crop), Wp = std::max(W, cfg.crop);
  const int top = static_cast<int>(rng.below(static_cast<std::uint32_t>(Hp - cfg.crop + 1)));
  const int left = static_cast<int>(rng.below(static_cast<std::uint32_t>(Wp - cfg.crop + 1)));
  assert(top + cfg.crop <= Hp && left + cfg.crop <= Wp);

  Sample out{Tensor<float>(Dims{1, 3, cfg.crop, cfg.crop}), Labels(1, cfg.crop, cfg.crop, kIgnoreLabel)};
  for (int i = 0; i < cfg.crop; ++i) {
    const int si = top + i;
    if (si >= H) break;
    for (int j = 0; j < cfg.crop; ++j) {
      const int sj = left + j;
      if (sj >= W) break;
      for (int c = 0; c < 3; ++c) out.image.at(0, c, i, j) = image.at(0, c, si, sj) - cfg.means[static_cast<std::size_t>(c)];
      out.labels.at(0, i, j) = labels.at(0, si, sj);
    }
  }
  return out;
}

}  // namespace cgnet
