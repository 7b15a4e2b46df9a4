#pragma once

#include "cgnet/cg_block.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cgnet {

/// Where the dilated surrounding-context branch is used.
enum class SurMode { kNone, kSingle, kFull };

struct NetworkConfig {
  int M = 3;            // CG blocks in stage 2
  int N = 21;           // CG blocks in stage 3
  int num_classes = 19;
  std::array<int, 3> channels{32, 64, 128};
  int dilation2 = 2;
  int dilation3 = 4;
  bool input_injection = true;
  SurMode sur_mode = SurMode::kFull;
  bool use_glo = true;
  Residual residual = Residual::kGlobal;
  Activation activation = Activation::kPReLU;
  bool interchannel_1x1 = false;
  int glo_reduction = 16;

  void validate() const;
  /// Gate reduction for a block of the given width: glo_reduction, capped at the width.
  int reduction_for(int channels) const;
};

/// Output resolution is 1/8 of the input before the final upsampling.
inline constexpr int kOutputStride = 8;

/// Shapes of the intermediate maps of one forward pass.
struct ForwardTrace {
  Dims stage1, stage2, stage3, logits, scores;
};

std::string to_string(SurMode m);
std::string to_string(Residual r);
std::string to_string(Activation a);
SurMode parse_sur_mode(const std::string& s);
Residual parse_residual(const std::string& s);
Activation parse_activation(const std::string& s);

/// The context guided network: three-convolution stem, M blocks at 1/4 and N
/// blocks at 1/8 resolution, a 1x1 classifier and bilinear x8 upsampling.
/// Stage inputs concatenate the first and last block outputs of the previous
/// stage (plus the downsampled image when input injection is on) followed by
/// BN-Act.
template <typename Scalar>
class CGNet {
 public:
  using Store = ParamStore<Scalar>;

  CGNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const auto [c1, c2, c3] = cfg.channels;
    const Activation act = cfg.activation;
    stem_.emplace_back(store_, "stage1.0", ConvSpec::square(3, c1, 3, 2), act, rng);
    stem_.emplace_back(store_, "stage1.1", ConvSpec::square(c1, c1, 3), act, rng);
    stem_.emplace_back(store_, "stage1.2", ConvSpec::square(c1, c1, 3), act, rng);
    const int inj = cfg.input_injection ? 3 : 0;
    in2_ = BnAct<Scalar>(store_, "stage2.input", c1 + inj, act);
    for (int k = 0; k < cfg.M; ++k)
      stage2_.emplace_back(store_, "stage2." + std::to_string(k), block_config(k == 0 ? c1 + inj : c2, c2, 2, k, false), rng);
    in3_ = BnAct<Scalar>(store_, "stage3.input", 2 * c2 + inj, act);
    for (int k = 0; k < cfg.N; ++k)
      stage3_.emplace_back(store_, "stage3." + std::to_string(k),
                           block_config(k == 0 ? 2 * c2 + inj : c3, c3, 3, k, k == cfg.N - 1), rng);
    head_ = BnAct<Scalar>(store_, "head.input", 2 * c3, act);
    // Small classifier weights start the softmax close to uniform.
    classifier_ = Conv<Scalar>(store_, "head.classifier", ConvSpec::pointwise(2 * c3, cfg.num_classes, true), rng, 0.01);
  }

  const NetworkConfig& config() const { return cfg_; }
  Store& store() { return store_; }
  const Store& store() const { return store_; }
  std::size_t count_params() const { return store_.learnable_count(); }

  /// Inference with running statistics; the parameter store is not touched.
  Tensor<Scalar> infer(const Tensor<Scalar>& x, ForwardTrace* trace = nullptr) const { return flow(*this, store_, x, trace); }
  /// Training forward with batch statistics; caches activations for backward().
  Tensor<Scalar> train(const Tensor<Scalar>& x) { return flow(*this, store_, x, nullptr); }

  /// Accumulates parameter gradients for dL/dscores of the last train() call.
  void backward(const Tensor<Scalar>& grad_scores) {
    const auto [c1, c2, c3] = cfg_.channels;
    Tensor<Scalar> g = bilinear_upsample_backward(grad_scores, logits_dims_, kOutputStride);
    g = head_.backward(store_, classifier_.backward(store_, g));
    g = backward_stage(stage3_, slice_channels(g, 0, c3), slice_channels(g, c3, 2 * c3));
    g = in3_.backward(store_, g);
    g = backward_stage(stage2_, slice_channels(g, 0, c2), slice_channels(g, c2, 2 * c2));
    g = in2_.backward(store_, g);
    if (cfg_.input_injection) g = slice_channels(g, 0, c1);
    for (std::size_t k = stem_.size(); k-- > 0;) g = stem_[k].backward(store_, g, k > 0);
  }

  std::uint64_t estimate_flops(int height, int width) const;

 private:
  CGBlockConfig block_config(int in, int out, int stage, int index, bool last_of_net) const {
    CGBlockConfig b;
    b.in_channels = in;
    b.out_channels = out;
    b.dilation = stage == 2 ? cfg_.dilation2 : cfg_.dilation3;
    b.downsample = index == 0;
    b.residual = index == 0 ? Residual::kNone : cfg_.residual;
    b.use_sur = cfg_.sur_mode == SurMode::kFull || (cfg_.sur_mode == SurMode::kSingle && last_of_net);
    b.use_glo = cfg_.use_glo;
    b.interchannel_1x1 = cfg_.interchannel_1x1;
    b.glo_reduction = cfg_.reduction_for(out);
    b.activation = cfg_.activation;
    return b;
  }

  /// Runs a stage; returns concat(first block output, last block output).
  template <typename Blocks, typename S>
  static Tensor<Scalar> run_stage(Blocks& blocks, S& s, const Tensor<Scalar>& x) {
    Tensor<Scalar> first = forward_as(blocks.front(), s, x);
    Tensor<Scalar> t = first;
    for (std::size_t k = 1; k < blocks.size(); ++k) t = forward_as(blocks[k], s, t);
    return concat_channels(first, t);
  }

  /// Backward through a stage given gradients at its first and last outputs;
  /// returns the gradient at the stage input (including injected channels).
  Tensor<Scalar> backward_stage(std::vector<CGBlock<Scalar>>& blocks, const Tensor<Scalar>& g_first, Tensor<Scalar> g_last) {
    for (std::size_t k = blocks.size(); k-- > 1;) g_last = blocks[k].backward(store_, g_last);
    add_inplace(g_last, g_first);
    return blocks.front().backward(store_, g_last);
  }

  template <typename Self, typename S>
  static Tensor<Scalar> flow(Self& self, S& s, const Tensor<Scalar>& x, ForwardTrace* trace) {
    detail::require(x.rank() == 4 && x.c() == 3, "CGNet: input must be [N,3,H,W], got " + x.dims().str());
    detail::require(x.h() % kOutputStride == 0 && x.w() % kOutputStride == 0,
                    "CGNet: input height and width must be divisible by 8, got " + x.dims().str());
    Tensor<Scalar> t = x;
    for (auto& conv : self.stem_) t = forward_as(conv, s, t);
    if (trace) trace->stage1 = t.dims();

    Tensor<Scalar> half, quarter;
    if (self.cfg_.input_injection) {
      half = avg_pool3x3s2_forward(x);
      quarter = avg_pool3x3s2_forward(half);
      t = concat_channels(t, half);
    }
    t = run_stage(self.stage2_, s, forward_as(self.in2_, s, t));
    if (trace) trace->stage2 = Dims{t.n(), t.c() / 2, t.h(), t.w()};
    if (self.cfg_.input_injection) t = concat_channels(t, quarter);
    t = run_stage(self.stage3_, s, forward_as(self.in3_, s, t));
    if (trace) trace->stage3 = Dims{t.n(), t.c() / 2, t.h(), t.w()};

    Tensor<Scalar> logits = forward_as(self.classifier_, s, forward_as(self.head_, s, t));
    if (trace) trace->logits = logits.dims();
    keep(self, self.logits_dims_, logits.dims());
    Tensor<Scalar> scores = bilinear_upsample_forward(logits, kOutputStride);
    if (trace) trace->scores = scores.dims();
    return scores;
  }

  NetworkConfig cfg_;
  Store store_;
  std::vector<ConvBnAct<Scalar>> stem_;
  BnAct<Scalar> in2_, in3_, head_;
  std::vector<CGBlock<Scalar>> stage2_, stage3_;
  Conv<Scalar> classifier_;
  Dims logits_dims_;
};

template <typename Scalar>
std::uint64_t CGNet<Scalar>::estimate_flops(int height, int width) const {
  detail::require(height % kOutputStride == 0 && width % kOutputStride == 0,
                  "estimate_flops: input dims must be divisible by 8");
  const auto [c1, c2, c3] = cfg_.channels;
  const std::uint64_t inj = cfg_.input_injection ? 3 : 0;
  auto px = [](int h, int w) { return static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w); };
  std::uint64_t f = 0;
  int h = height, w = width;
  for (const auto& conv : stem_) {
    const int oh = conv.spec().out_h(h), ow = conv.spec().out_w(w);
    f += conv_flops(conv.spec(), oh, ow) + 4 * px(oh, ow) * static_cast<std::uint64_t>(conv.spec().out_channels);
    h = oh;
    w = ow;
  }
  if (cfg_.input_injection) f += 2 * 3 * (px(h, w) + px(h / 2, w / 2));
  f += 4 * px(h, w) * (static_cast<std::uint64_t>(c1) + inj);
  for (const auto& block : stage2_) {
    const FlopCount fc = block.flops(h, w);
    f += fc.flops;
    h = fc.h;
    w = fc.w;
  }
  f += 4 * px(h, w) * (2 * static_cast<std::uint64_t>(c2) + inj);
  for (const auto& block : stage3_) {
    const FlopCount fc = block.flops(h, w);
    f += fc.flops;
    h = fc.h;
    w = fc.w;
  }
  f += 4 * px(h, w) * 2 * static_cast<std::uint64_t>(c3);
  f += conv_flops(classifier_.spec(), h, w);
  return f;
}

}  // namespace cgnet
