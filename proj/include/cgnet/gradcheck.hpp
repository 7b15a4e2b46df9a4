#pragma once

#include "cgnet/param_store.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace cgnet {

struct GradEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0;
  bool passed = true;
};

struct GradReport {
  double tolerance = 0;
  std::vector<GradEntry> entries;
  bool passed() const;
};

/// |a - n| / max(1, |a| + |n|)
double grad_rel_err(double analytic, double numeric);

/// Central differences with step 1e-5 * max(1, |theta|) over every element of
/// theta; loss() must re-evaluate with the current theta.
GradEntry check_tensor(const std::string& name, Tensor<double>& theta, const Tensor<double>& analytic,
                       const std::function<double()>& loss, double tolerance);

/// One entry per learnable store tensor. analytic() must leave gradients in the
/// store; they are read before any perturbation.
GradReport check_store(ParamStore<double>& store, const std::function<double()>& loss,
                       const std::function<void()>& analytic, double tolerance);

/// Convolution (dense, strided, dilated channel-wise, 1x1 with bias), batch norm,
/// ReLU, PReLU, sigmoid, global pooling, affine, 3x3/2 average pooling, bilinear
/// upsampling and the masked cross-entropy.
GradReport gradcheck_kernels(double tolerance, std::uint64_t seed = 1);

/// Micro CGNet (M=1, N=1, channels 8/8/16, K=3, 2x3x16x16 input) in f64 train
/// mode, loss = masked cross-entropy.
GradReport gradcheck_network(double tolerance, std::uint64_t seed = 1);

void write_grad_report(std::ostream& os, const GradReport& r);

}  // namespace cgnet
