#include "cgnet/gradcheck.hpp"

#include "cgnet/network.hpp"
#include "cgnet/ops.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace cgnet {
namespace {

using T = Tensor<double>;

T normal(Rng& rng, const Dims& d, double mean, double sd) { return rand_normal<double>(rng, d, mean, sd); }

double dot(const T& a, const T& r) { return (a.array() * r.array()).sum(); }

/// Normal values pushed away from 0 so finite differences never straddle a kink.
T away_from_zero(Rng& rng, const Dims& d) {
  T t = normal(rng, d, 0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = t[i] >= 0 ? t[i] + 0.1 : t[i] - 0.1;
  return t;
}

void conv_case(GradReport& rep, Rng& rng, const std::string& name, const ConvSpec& spec, int h, int w) {
  T x = normal(rng, Dims{2, spec.in_channels, h, w}, 0, 1);
  T wt = normal(rng, spec.weight_dims(), 0, 0.5);
  T b = normal(rng, Dims{spec.out_channels}, 0, 0.5);
  const T* bp = spec.has_bias ? &b : nullptr;
  const T r = normal(rng, Dims{2, spec.out_channels, spec.out_h(h), spec.out_w(w)}, 0, 1);
  auto loss = [&] { return dot(conv2d_forward(x, wt, bp, spec), r); };
  const ConvGrads<double> g = conv2d_backward(r, x, wt, spec);
  rep.entries.push_back(check_tensor(name + ".x", x, g.x, loss, rep.tolerance));
  rep.entries.push_back(check_tensor(name + ".w", wt, g.w, loss, rep.tolerance));
  if (spec.has_bias) rep.entries.push_back(check_tensor(name + ".b", b, *g.b, loss, rep.tolerance));
}

}  // namespace

bool GradReport::passed() const {
  for (const auto& e : entries)
    if (!e.passed) return false;
  return true;
}

double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
}

GradEntry check_tensor(const std::string& name, T& theta, const T& analytic, const std::function<double()>& loss,
                       double tolerance) {
  detail::require(theta.dims() == analytic.dims(), "check_tensor: gradient dims differ for " + name);
  GradEntry e{name, theta.size(), 0.0, true};
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    const double h = 1e-5 * std::max(1.0, std::abs(keep));
    theta[i] = keep + h;
    const double up = loss();
    theta[i] = keep - h;
    const double down = loss();
    theta[i] = keep;
    const double err = grad_rel_err(analytic[i], (up - down) / (2 * h));
    if (!(err <= e.max_rel_err)) e.max_rel_err = std::isnan(err) ? INFINITY : std::max(e.max_rel_err, err);
  }
  e.passed = e.max_rel_err <= tolerance;
  return e;
}

GradReport check_store(ParamStore<double>& store, const std::function<double()>& loss, const std::function<void()>& analytic,
                       double tolerance) {
  GradReport rep;
  rep.tolerance = tolerance;
  store.zero_grad();
  analytic();
  std::vector<T> grads;
  for (const auto& p : store) grads.push_back(p.learnable() ? p.grad : T());
  store.zero_grad();
  std::size_t k = 0;
  for (auto& p : store) {
    if (p.learnable()) rep.entries.push_back(check_tensor(p.name, p.value, grads[k], loss, tolerance));
    ++k;
  }
  return rep;
}

GradReport gradcheck_kernels(double tolerance, std::uint64_t seed) {
  GradReport rep;
  rep.tolerance = tolerance;
  Rng rng(seed);

  conv_case(rep, rng, "conv3x3", ConvSpec::square(3, 4, 3, 1, 1, 1, true), 6, 5);
  conv_case(rep, rng, "conv3x3_s2", ConvSpec::square(3, 4, 3, 2), 7, 6);
  conv_case(rep, rng, "conv_channelwise_d2", ConvSpec::channelwise(3, 2), 7, 7);
  conv_case(rep, rng, "conv1x1", ConvSpec::pointwise(4, 3, true), 4, 5);

  {
    T x = normal(rng, Dims{2, 3, 4, 3}, 0.5, 2.0);
    T gamma = normal(rng, Dims{3}, 1, 0.3), beta = normal(rng, Dims{3}, 0, 0.3);
    T rm(Dims{3}), rv(Dims{3}, 1.0);
    const T r = normal(rng, x.dims(), 0, 1);
    auto loss = [&] { return dot(batchnorm_forward_train<double>(x, gamma, beta, rm, rv, {}, nullptr), r); };
    BatchNormSaved<double> saved;
    batchnorm_forward_train<double>(x, gamma, beta, rm, rv, {}, &saved);
    const auto g = batchnorm_backward(r, saved, gamma);
    rep.entries.push_back(check_tensor("batchnorm.x", x, g.x, loss, tolerance));
    rep.entries.push_back(check_tensor("batchnorm.gamma", gamma, g.gamma, loss, tolerance));
    rep.entries.push_back(check_tensor("batchnorm.beta", beta, g.beta, loss, tolerance));
  }
  {
    T x = away_from_zero(rng, Dims{2, 3, 3, 3});
    const T r = normal(rng, x.dims(), 0, 1);
    auto loss = [&] { return dot(relu_forward(x), r); };
    rep.entries.push_back(check_tensor("relu.x", x, relu_backward(r, x), loss, tolerance));
  }
  for (int rank : {4, 2}) {
    T x = away_from_zero(rng, rank == 4 ? Dims{2, 3, 3, 3} : Dims{4, 3});
    T slope = normal(rng, Dims{3}, 0.25, 0.1);
    const T r = normal(rng, x.dims(), 0, 1);
    auto loss = [&] { return dot(prelu_forward(x, slope), r); };
    const auto g = prelu_backward(r, x, slope);
    const std::string tag = rank == 4 ? "prelu" : "prelu_vec";
    rep.entries.push_back(check_tensor(tag + ".x", x, g.x, loss, tolerance));
    rep.entries.push_back(check_tensor(tag + ".slope", slope, g.slope, loss, tolerance));
  }
  {
    T x = normal(rng, Dims{3, 5}, 0, 2);
    const T r = normal(rng, x.dims(), 0, 1);
    auto loss = [&] { return dot(sigmoid_forward(x), r); };
    rep.entries.push_back(check_tensor("sigmoid.x", x, sigmoid_backward(r, sigmoid_forward(x)), loss, tolerance));
  }
  {
    T x = normal(rng, Dims{2, 3, 4, 5}, 0, 1);
    const T r = normal(rng, Dims{2, 3}, 0, 1);
    auto loss = [&] { return dot(global_avg_pool_forward(x), r); };
    rep.entries.push_back(check_tensor("global_avg_pool.x", x, global_avg_pool_backward(r, x.dims()), loss, tolerance));
  }
  {
    T x = normal(rng, Dims{3, 4}, 0, 1), w = normal(rng, Dims{5, 4}, 0, 1), b = normal(rng, Dims{5}, 0, 1);
    const T r = normal(rng, Dims{3, 5}, 0, 1);
    auto loss = [&] { return dot(affine_forward(x, w, b), r); };
    const auto g = affine_backward(r, x, w);
    rep.entries.push_back(check_tensor("affine.x", x, g.x, loss, tolerance));
    rep.entries.push_back(check_tensor("affine.w", w, g.w, loss, tolerance));
    rep.entries.push_back(check_tensor("affine.b", b, g.b, loss, tolerance));
  }
  for (int size : {7, 8}) {
    T x = normal(rng, Dims{2, 2, size, size}, 0, 1);
    const T r = normal(rng, Dims{2, 2, (size + 1) / 2, (size + 1) / 2}, 0, 1);
    auto loss = [&] { return dot(avg_pool3x3s2_forward(x), r); };
    rep.entries.push_back(check_tensor("avg_pool3x3s2_" + std::to_string(size) + ".x", x,
                                       avg_pool3x3s2_backward(r, x.dims()), loss, tolerance));
  }
  for (int factor : {2, 8}) {
    T x = normal(rng, Dims{1, 2, 3, 4}, 0, 1);
    const T r = normal(rng, Dims{1, 2, 3 * factor, 4 * factor}, 0, 1);
    auto loss = [&] { return dot(bilinear_upsample_forward(x, factor), r); };
    rep.entries.push_back(check_tensor("bilinear_x" + std::to_string(factor) + ".x", x,
                                       bilinear_upsample_backward(r, x.dims(), factor), loss, tolerance));
  }
  for (LossReduction red : {LossReduction::kMean, LossReduction::kSum}) {
    T x = normal(rng, Dims{2, 4, 3, 3}, 0, 2);
    Labels y(2, 3, 3);
    for (auto& v : y.v) v = static_cast<std::int32_t>(rng.below(5));
    for (auto& v : y.v)
      if (v == 4) v = kIgnoreLabel;
    y.v[0] = 1;
    auto loss = [&] { return softmax_ce_masked(x, y, kIgnoreLabel, red).loss; };
    const auto res = softmax_ce_masked(x, y, kIgnoreLabel, red);
    rep.entries.push_back(check_tensor(red == LossReduction::kMean ? "cross_entropy_mean.x" : "cross_entropy_sum.x", x,
                                       res.grad, loss, tolerance));
  }
  return rep;
}

GradReport gradcheck_network(double tolerance, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.M = 1;
  cfg.N = 1;
  cfg.num_classes = 3;
  cfg.channels = {8, 8, 16};
  CGNet<double> net(cfg, seed);
  Rng rng = Rng::substream(seed, 1);
  // Perturb BN affine parameters and PReLU slopes away from their symmetric init.
  for (auto& p : net.store())
    if (p.kind == ParamKind::kNoDecay) p.value.array() += normal(rng, p.value.dims(), 0, 0.1).array();
  const T x = normal(rng, Dims{2, 3, 16, 16}, 0, 1);
  Labels y(2, 16, 16);
  for (auto& v : y.v) v = static_cast<std::int32_t>(rng.below(3));
  auto loss = [&] { return softmax_ce_masked(net.train(x), y).loss; };
  auto analytic = [&] { net.backward(softmax_ce_masked(net.train(x), y).grad); };
  return check_store(net.store(), loss, analytic, tolerance);
}

void write_grad_report(std::ostream& os, const GradReport& r) {
  char buf[160];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%-40s %7zu  %.3e  %s\n", e.name.c_str(), e.checked, e.max_rel_err, e.passed ? "ok" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%s (tolerance %.1e, %zu tensors)\n", r.passed() ? "PASS" : "FAIL", r.tolerance, r.entries.size());
  os << buf;
}

}  // namespace cgnet
