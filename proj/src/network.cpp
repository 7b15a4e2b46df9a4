#include "cgnet/network.hpp"

#include <algorithm>

namespace cgnet {

void CGBlockConfig::validate() const {
  detail::require(in_channels >= 1 && out_channels >= 2, "CGBlockConfig: channel counts must be positive");
  detail::require(out_channels % 2 == 0, "CGBlockConfig: out_channels must be even, got " + std::to_string(out_channels));
  detail::require(dilation >= 1, "CGBlockConfig: dilation must be >= 1");
  detail::require(glo_reduction >= 1 && out_channels % glo_reduction == 0,
                  "CGBlockConfig: glo_reduction " + std::to_string(glo_reduction) + " must divide out_channels " +
                      std::to_string(out_channels));
  if (residual != Residual::kNone) {
    detail::require(!downsample, "CGBlockConfig: residual connections require a non-downsampling block");
    detail::require(in_channels == out_channels, "CGBlockConfig: residual connections require in_channels == out_channels");
  }
}

std::uint64_t conv_flops(const ConvSpec& spec, int out_h, int out_w) {
  const std::uint64_t px = static_cast<std::uint64_t>(out_h) * static_cast<std::uint64_t>(out_w);
  const std::uint64_t taps = static_cast<std::uint64_t>(spec.in_per_group()) * static_cast<std::uint64_t>(spec.kernel_h) *
                             static_cast<std::uint64_t>(spec.kernel_w);
  std::uint64_t f = 2 * px * static_cast<std::uint64_t>(spec.out_channels) * taps;
  if (spec.has_bias) f += px * static_cast<std::uint64_t>(spec.out_channels);
  return f;
}

void NetworkConfig::validate() const {
  detail::require(M >= 1 && N >= 1, "NetworkConfig: M and N must be >= 1");
  detail::require(num_classes >= 2, "NetworkConfig: num_classes must be >= 2");
  for (int c : channels)
    detail::require(c >= 2 && c % 2 == 0, "NetworkConfig: stage channels must be positive and even, got " + std::to_string(c));
  detail::require(dilation2 >= 1 && dilation3 >= 1, "NetworkConfig: dilations must be >= 1");
  detail::require(glo_reduction >= 1, "NetworkConfig: glo_reduction must be >= 1");
  for (int c : {channels[1], channels[2]})
    detail::require(c % reduction_for(c) == 0, "NetworkConfig: glo_reduction " + std::to_string(glo_reduction) +
                                                   " does not divide stage width " + std::to_string(c));
}

int NetworkConfig::reduction_for(int c) const { return std::min(glo_reduction, c); }

std::string to_string(SurMode m) {
  switch (m) {
    case SurMode::kNone: return "none";
    case SurMode::kSingle: return "single";
    case SurMode::kFull: return "full";
  }
  return "?";
}

std::string to_string(Residual r) {
  switch (r) {
    case Residual::kNone: return "none";
    case Residual::kLocal: return "lrl";
    case Residual::kGlobal: return "grl";
  }
  return "?";
}

std::string to_string(Activation a) { return a == Activation::kReLU ? "relu" : "prelu"; }

SurMode parse_sur_mode(const std::string& s) {
  if (s == "none") return SurMode::kNone;
  if (s == "single") return SurMode::kSingle;
  if (s == "full") return SurMode::kFull;
  throw std::invalid_argument("unknown sur_mode '" + s + "' (expected none, single or full)");
}

Residual parse_residual(const std::string& s) {
  if (s == "none") return Residual::kNone;
  if (s == "lrl") return Residual::kLocal;
  if (s == "grl") return Residual::kGlobal;
  throw std::invalid_argument("unknown residual '" + s + "' (expected lrl, grl or none)");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kReLU;
  if (s == "prelu") return Activation::kPReLU;
  throw std::invalid_argument("unknown activation '" + s + "' (expected relu or prelu)");
}

}  // namespace cgnet
