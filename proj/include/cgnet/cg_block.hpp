#pragma once

#include "cgnet/layers.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace cgnet {

enum class Residual { kNone, kLocal, kGlobal };

struct CGBlockConfig {
  int in_channels = 32;
  int out_channels = 32;
  int dilation = 2;
  bool downsample = false;
  Residual residual = Residual::kGlobal;
  bool use_sur = true;
  bool use_glo = true;
  bool interchannel_1x1 = false;
  int glo_reduction = 16;
  Activation activation = Activation::kPReLU;

  void validate() const;
};

/// Output size and operation count of one layer sequence.
struct FlopCount {
  std::uint64_t flops = 0;
  int h = 0;
  int w = 0;
};

std::uint64_t conv_flops(const ConvSpec& spec, int out_h, int out_w);

/// Context guided block.
///
/// Regular form (in == out allowed, shape preserving):
///   1x1 Conv-BN-Act in -> out/2, then two channel-wise 3x3 convolutions on the
///   reduced map: the local extractor (dilation 1) and the surrounding-context
///   extractor (dilation r). Their concatenation goes through BN-Act (the joint
///   extractor) and is re-weighted channel-wise by the global-context gate.
///   LRL adds the input before the gate, GRL after it.
///
/// Downsampling form: the entry is a 3x3 stride-2 Conv-BN-Act in -> out, the
///   channel-wise pair works at full width, the 2*out joint feature is reduced
///   back to out by a 1x1 convolution before the gate. No residual.
template <typename Scalar>
class CGBlock {
 public:
  using Store = ParamStore<Scalar>;

  CGBlock() = default;
  CGBlock(Store& store, const std::string& name, const CGBlockConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    width_ = cfg.downsample ? cfg.out_channels : cfg.out_channels / 2;
    const ConvSpec entry = cfg.downsample ? ConvSpec::square(cfg.in_channels, width_, 3, 2)
                                          : ConvSpec::pointwise(cfg.in_channels, width_);
    entry_ = ConvBnAct<Scalar>(store, name + ".entry", entry, cfg.activation, rng);
    loc_ = Conv<Scalar>(store, name + ".loc", ConvSpec::channelwise(width_, 1), rng);
    sur_ = Conv<Scalar>(store, name + ".sur", ConvSpec::channelwise(width_, cfg.use_sur ? cfg.dilation : 1), rng);
    if (cfg.interchannel_1x1) mix_.emplace(store, name + ".mix", ConvSpec::pointwise(2 * width_, 2 * width_), rng);
    joint_ = BnAct<Scalar>(store, name + ".joint", 2 * width_, cfg.activation);
    if (cfg.downsample) reduce_.emplace(store, name + ".reduce", ConvSpec::pointwise(2 * width_, cfg.out_channels), rng);
    if (cfg.use_glo) glo_.emplace(store, name + ".glo", cfg.out_channels, cfg.glo_reduction, rng);
  }

  const CGBlockConfig& config() const { return cfg_; }
  const ConvSpec& local_spec() const { return loc_.spec(); }
  const ConvSpec& surround_spec() const { return sur_.spec(); }

  Tensor<Scalar> infer(const Store& s, const Tensor<Scalar>& x) const { return flow(*this, s, x); }
  Tensor<Scalar> train(Store& s, const Tensor<Scalar>& x) { return flow(*this, s, x); }

  Tensor<Scalar> backward(Store& s, const Tensor<Scalar>& g_out, bool need_grad_x = true) {
    Tensor<Scalar> g = g_out;
    std::optional<Tensor<Scalar>> g_skip;
    if (cfg_.residual == Residual::kGlobal) g_skip = g;
    if (glo_) g = glo_->backward(s, g);
    if (cfg_.residual == Residual::kLocal) g_skip = g;
    if (reduce_) g = reduce_->backward(s, g);
    g = joint_.backward(s, g);
    if (mix_) g = mix_->backward(s, g);
    Tensor<Scalar> g_entry = loc_.backward(s, slice_channels(g, 0, width_));
    add_inplace(g_entry, sur_.backward(s, slice_channels(g, width_, 2 * width_)));
    Tensor<Scalar> gx = entry_.backward(s, g_entry, need_grad_x);
    if (g_skip && need_grad_x) add_inplace(gx, *g_skip);
    return gx;
  }

  FlopCount flops(int h, int w) const;

 private:
  template <typename Self, typename S>
  static Tensor<Scalar> flow(Self& self, S& s, const Tensor<Scalar>& x) {
    Tensor<Scalar> e = forward_as(self.entry_, s, x);
    Tensor<Scalar> j = concat_channels(forward_as(self.loc_, s, e), forward_as(self.sur_, s, e));
    if (self.mix_) j = forward_as(*self.mix_, s, j);
    j = forward_as(self.joint_, s, j);
    if (self.reduce_) j = forward_as(*self.reduce_, s, j);
    if (self.cfg_.residual == Residual::kLocal) j = add(j, x);
    Tensor<Scalar> y = self.glo_ ? forward_as(*self.glo_, s, j) : std::move(j);
    if (self.cfg_.residual == Residual::kGlobal) y = add(y, x);
    return y;
  }

  CGBlockConfig cfg_;
  int width_ = 0;
  ConvBnAct<Scalar> entry_;
  Conv<Scalar> loc_, sur_;
  std::optional<Conv<Scalar>> mix_;
  BnAct<Scalar> joint_;
  std::optional<Conv<Scalar>> reduce_;
  std::optional<GlobalContext<Scalar>> glo_;
};

template <typename Scalar>
FlopCount CGBlock<Scalar>::flops(int h, int w) const {
  const ConvSpec& entry = entry_.spec();
  FlopCount fc;
  fc.h = entry.out_h(h);
  fc.w = entry.out_w(w);
  const std::uint64_t px = static_cast<std::uint64_t>(fc.h) * static_cast<std::uint64_t>(fc.w);
  fc.flops += conv_flops(entry, fc.h, fc.w) + 4 * px * static_cast<std::uint64_t>(width_);
  fc.flops += conv_flops(loc_.spec(), fc.h, fc.w) + conv_flops(sur_.spec(), fc.h, fc.w);
  if (mix_) fc.flops += conv_flops(mix_->spec(), fc.h, fc.w);
  fc.flops += 4 * px * static_cast<std::uint64_t>(2 * width_);
  if (reduce_) fc.flops += conv_flops(reduce_->spec(), fc.h, fc.w);
  if (glo_) {
    const auto c = static_cast<std::uint64_t>(cfg_.out_channels);
    const auto hidden = c / static_cast<std::uint64_t>(cfg_.glo_reduction);
    // pooling, two affines, ReLU and sigmoid
    fc.flops += 2 * c + 2 * c * hidden * 2 + 2 * hidden + 2 * c;
  }
  return fc;
}

}  // namespace cgnet
