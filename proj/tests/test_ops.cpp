#include "cgnet/ops.hpp"

#include "cgnet/errors.hpp"
#include "cgnet/parallel.hpp"

#include <doctest.h>

#include <cmath>

using namespace cgnet;
using T = Tensor<double>;

namespace {

// Direct seven-loop convolution, written independently of the kernels.
T naive_conv(const T& x, const T& w, const T* b, const ConvSpec& s) {
  const int Ho = (x.h() + 2 * s.padding - s.dilation * (s.kernel_h - 1) - 1) / s.stride + 1;
  const int Wo = (x.w() + 2 * s.padding - s.dilation * (s.kernel_w - 1) - 1) / s.stride + 1;
  T out(Dims{x.n(), s.out_channels, Ho, Wo});
  const int cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < s.out_channels; ++o)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double acc = b ? (*b)[static_cast<std::size_t>(o)] : 0.0;
          const int g = o / cout_g;
          for (int c = 0; c < cin_g; ++c)
            for (int u = 0; u < s.kernel_h; ++u)
              for (int v = 0; v < s.kernel_w; ++v) {
                const int y = i * s.stride - s.padding + u * s.dilation;
                const int xx = j * s.stride - s.padding + v * s.dilation;
                if (y < 0 || y >= x.h() || xx < 0 || xx >= x.w()) continue;
                acc += w.at(o, c, u, v) * x.at(n, g * cin_g + c, y, xx);
              }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

double max_abs_diff(const T& a, const T& b) {
  REQUIRE(a.dims() == b.dims());
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace

TEST_CASE("dilated all-ones kernel center value") {
  T x(Dims{1, 1, 5, 5});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) x.at(0, 0, i, j) = 5 * i + j;
  const ConvSpec s = ConvSpec::square(1, 1, 3, 1, 2);
  CHECK(s.padding == 2);
  const T w(s.weight_dims(), 1.0);
  // sum of 5i+j over i,j in {0,2,4}: 3*5*(0+2+4) + 3*(0+2+4)
  CHECK(conv2d_forward<double>(x, w, nullptr, s).at(0, 0, 2, 2) == 108.0);
}

TEST_CASE("identity 1x1 conv and its adjoint") {
  Rng rng(1);
  const T x = rand_normal<double>(rng, Dims{2, 3, 4, 5}, 0, 1);
  const ConvSpec s = ConvSpec::pointwise(3, 3);
  T w(s.weight_dims());
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1;
  CHECK(max_abs_diff(conv2d_forward<double>(x, w, nullptr, s), x) == 0.0);
  const auto g = conv2d_backward(x, x, w, s);
  CHECK(max_abs_diff(g.x, x) == 0.0);
}

TEST_CASE("zero weights with bias give constant planes") {
  const ConvSpec s = ConvSpec::square(2, 3, 3, 1, 1, 1, true);
  const T x(Dims{1, 2, 4, 4}, 7.0), w(s.weight_dims());
  T b(Dims{3});
  b[0] = 1, b[1] = -2, b[2] = 0.5;
  const T y = conv2d_forward(x, w, &b, s);
  for (int o = 0; o < 3; ++o)
    for (std::size_t k = 0; k < y.plane_size(); ++k) CHECK(y.plane(0, o)[k] == b[static_cast<std::size_t>(o)]);
}

TEST_CASE("zero grad_out gives zero gradients") {
  Rng rng(2);
  const ConvSpec s = ConvSpec::square(2, 4, 3, 2, 1, 2, true);
  const T x = rand_normal<double>(rng, Dims{1, 2, 6, 6}, 0, 1), w = rand_normal<double>(rng, s.weight_dims(), 0, 1);
  const auto g = conv2d_backward(T(Dims{1, 4, 3, 3}), x, w, s);
  CHECK(g.x.array().abs().maxCoeff() == 0);
  CHECK(g.w.array().abs().maxCoeff() == 0);
  CHECK(g.b->array().abs().maxCoeff() == 0);
}

TEST_CASE("conv matches the direct oracle over strides, dilations and groups") {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int groups = 1 + static_cast<int>(rng.below(3));
    const int cin = groups * (1 + static_cast<int>(rng.below(3)));
    const int cout = groups * (1 + static_cast<int>(rng.below(3)));
    const int k = rng.below(2) ? 3 : 1;
    const int stride = 1 + static_cast<int>(rng.below(2)), dil = 1 + static_cast<int>(rng.below(3));
    const ConvSpec s = ConvSpec::square(cin, cout, k, stride, dil, groups, rng.below(2) == 1);
    const int h = 3 + static_cast<int>(rng.below(8)), w = 3 + static_cast<int>(rng.below(8));
    const T x = rand_normal<double>(rng, Dims{2, cin, h, w}, 0, 1);
    const T wt = rand_normal<double>(rng, s.weight_dims(), 0, 1);
    const T b = rand_normal<double>(rng, Dims{cout}, 0, 1);
    const T* bp = s.has_bias ? &b : nullptr;
    CAPTURE(trial);
    CHECK(max_abs_diff(conv2d_forward(x, wt, bp, s), naive_conv(x, wt, bp, s)) < 1e-12);
  }
}

TEST_CASE("conv backward is the adjoint of forward") {
  // <conv(x), r> == <x, conv^T(r)> and the weight identity <conv_w(x), r> == <w, dW>.
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const int groups = trial % 2 ? 2 : 1;
    const ConvSpec s = ConvSpec::square(2 * groups, 2 * groups, 3, 1 + trial % 2, 1 + trial % 3, groups);
    const T x = rand_normal<double>(rng, Dims{2, s.in_channels, 7, 6}, 0, 1);
    const T w = rand_normal<double>(rng, s.weight_dims(), 0, 1);
    const T y = conv2d_forward<double>(x, w, nullptr, s);
    const T r = rand_normal<double>(rng, y.dims(), 0, 1);
    const auto g = conv2d_backward(r, x, w, s);
    const double lhs = (y.array() * r.array()).sum();
    CHECK((x.array() * g.x.array()).sum() == doctest::Approx(lhs).epsilon(1e-10));
    CHECK((w.array() * g.w.array()).sum() == doctest::Approx(lhs).epsilon(1e-10));
  }
}

TEST_CASE("conv results do not depend on the thread count") {
  Rng rng(7);
  const ConvSpec s = ConvSpec::square(8, 8, 3, 1, 2, 8);
  const auto x = rand_normal<float>(rng, Dims{2, 8, 40, 40}, 0, 1);
  const auto w = rand_normal<float>(rng, s.weight_dims(), 0, 1);
  const int before = num_threads();
  set_num_threads(1);
  const auto a = conv2d_forward<float>(x, w, nullptr, s);
  const auto ga = conv2d_backward(a, x, w, s);
  set_num_threads(4);
  const auto b = conv2d_forward<float>(x, w, nullptr, s);
  const auto gb = conv2d_backward(b, x, w, s);
  set_num_threads(before);
  CHECK((a.array() == b.array()).all());
  CHECK((ga.x.array() == gb.x.array()).all());
  CHECK((ga.w.array() == gb.w.array()).all());
}

TEST_CASE("channel-wise conv keeps channels independent") {
  Rng rng(8);
  const ConvSpec s = ConvSpec::channelwise(4, 2);
  const T w = rand_normal<double>(rng, s.weight_dims(), 0, 1);
  T x = rand_normal<double>(rng, Dims{1, 4, 8, 8}, 0, 1);
  const T y0 = conv2d_forward<double>(x, w, nullptr, s);
  for (std::size_t k = 0; k < x.plane_size(); ++k) x.plane(0, 2)[k] += 1.0;
  const T y1 = conv2d_forward<double>(x, w, nullptr, s);
  for (int c = 0; c < 4; ++c) {
    const double d = (slice_channels(y1, c, c + 1).array() - slice_channels(y0, c, c + 1).array()).abs().maxCoeff();
    if (c == 2)
      CHECK(d > 0);
    else
      CHECK(d == 0);
  }
}

TEST_CASE("batchnorm examples") {
  BatchNormOptions opt;
  SUBCASE("two values normalize to -1 and +1") {
    T x(Dims{1, 1, 1, 2});
    x[0] = 1, x[1] = 3;
    T g(Dims{1}, 1.0), b(Dims{1}), rm(Dims{1}), rv(Dims{1}, 1.0);
    const T y = batchnorm_forward_train<double>(x, g, b, rm, rv, opt, nullptr);
    CHECK(y[0] == doctest::Approx(-1).epsilon(1e-4));
    CHECK(y[1] == doctest::Approx(1).epsilon(1e-4));
    // running stats blend towards mean 2 and biased variance 1
    CHECK(rm[0] == doctest::Approx(0.2));
    CHECK(rv[0] == doctest::Approx(1.0));
  }
  SUBCASE("constant channel normalizes to zero") {
    T x(Dims{2, 1, 3, 3}, 4.0);
    T g(Dims{1}, 1.0), b(Dims{1}), rm(Dims{1}), rv(Dims{1}, 1.0);
    const T y = batchnorm_forward_train<double>(x, g, b, rm, rv, opt, nullptr);
    CHECK(y.array().abs().maxCoeff() < 1e-6);
  }
  SUBCASE("identity running stats in infer mode") {
    Rng rng(1);
    const T x = rand_normal<double>(rng, Dims{1, 2, 3, 3}, 0, 1);
    T g(Dims{2}, 1.0), b(Dims{2}), rm(Dims{2}), rv(Dims{2}, 1.0);
    const T y = batchnorm_forward_infer<double>(x, g, b, rm, rv, BatchNormOptions{1e-12, 0.1});
    CHECK(max_abs_diff(x, y) < 1e-9);
  }
  SUBCASE("single element batch is rejected") {
    T x(Dims{1, 1, 1, 1}, 1.0);
    T g(Dims{1}, 1.0), b(Dims{1}), rm(Dims{1}), rv(Dims{1}, 1.0);
    CHECK_THROWS_AS(batchnorm_forward_train<double>(x, g, b, rm, rv, opt, nullptr), std::invalid_argument);
  }
  SUBCASE("backward needs a recorded forward") {
    CHECK_THROWS(batchnorm_backward(T(Dims{1, 1, 1, 2}), BatchNormSaved<double>{}, T(Dims{1}, 1.0)));
  }
  SUBCASE("grad beta sums grad_out and zero grad gives zero") {
    Rng rng(2);
    const T x = rand_normal<double>(rng, Dims{2, 3, 2, 2}, 0, 1);
    T g(Dims{3}, 1.5), b(Dims{3}), rm(Dims{3}), rv(Dims{3}, 1.0);
    BatchNormSaved<double> saved;
    batchnorm_forward_train<double>(x, g, b, rm, rv, opt, &saved);
    const T go = rand_normal<double>(rng, x.dims(), 0, 1);
    const auto grads = batchnorm_backward(go, saved, g);
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 4; ++k) s += go.plane(n, c)[k];
      CHECK(grads.beta[static_cast<std::size_t>(c)] == doctest::Approx(s));
    }
    const auto zero = batchnorm_backward(T(x.dims()), saved, g);
    CHECK(zero.x.array().abs().maxCoeff() == 0);
    CHECK(zero.gamma.array().abs().maxCoeff() == 0);
  }
}

TEST_CASE("prelu and relu") {
  T x(Dims{1, 1, 1, 4});
  x[0] = -2, x[1] = 0, x[2] = 1.5, x[3] = -0.5;
  T a(Dims{1}, 0.25);
  const T y = prelu_forward(x, a);
  CHECK(y[0] == -0.5);
  CHECK(y[1] == 0);
  CHECK(y[2] == 1.5);
  const T zero_slope(Dims{1});
  CHECK(max_abs_diff(prelu_forward(x, zero_slope), relu_forward(x)) == 0);
  const auto g = prelu_backward(T(x.dims(), 1.0), x, a);
  CHECK(g.x[0] == 0.25);
  CHECK(g.x[1] == 0);  // the kink takes gradient 0
  CHECK(g.x[2] == 1);
  CHECK(g.slope[0] == doctest::Approx(-2.5));
  const T neg(Dims{1, 1, 2, 2}, -3.0);
  CHECK(relu_forward(neg).array().abs().maxCoeff() == 0);
  CHECK(relu_backward(T(neg.dims(), 1.0), neg).array().abs().maxCoeff() == 0);
}

TEST_CASE("sigmoid saturates without NaN") {
  T x(Dims{3});
  x[0] = 0, x[1] = 40, x[2] = -40;
  const T y = sigmoid_forward(x);
  CHECK(y[0] == 0.5);
  CHECK(y[1] == doctest::Approx(1.0));
  CHECK(y[2] >= 0);
  CHECK(y[2] < 1e-15);
  CHECK(y.all_finite());
  CHECK(sigmoid_backward(T(Dims{3}, 1.0), y)[0] == 0.25);
}

TEST_CASE("global average pooling") {
  T x(Dims{1, 1, 2, 2});
  x[0] = 1, x[1] = 2, x[2] = 3, x[3] = 4;
  CHECK(global_avg_pool_forward(x)[0] == 2.5);
  const T g = global_avg_pool_backward(T(Dims{1, 1}, 1.0), x.dims());
  for (std::size_t k = 0; k < 4; ++k) CHECK(g[k] == 0.25);
}

TEST_CASE("affine identity and bias broadcast") {
  Rng rng(3);
  const T x = rand_normal<double>(rng, Dims{2, 3}, 0, 1);
  T w(Dims{3, 3});
  for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(4 * i)] = 1;
  CHECK(max_abs_diff(affine_forward(x, w, T(Dims{3})), x) == 0);
  T b(Dims{3});
  b[0] = 1, b[1] = 2, b[2] = 3;
  const T y = affine_forward(T(Dims{2, 3}), w, b);
  CHECK(y[4] == 2);
}

TEST_CASE("3x3/2 average pooling with zero padding") {
  const T ones(Dims{1, 1, 2, 2}, 1.0);
  const T p = avg_pool3x3s2_forward(ones);
  CHECK(p.dims() == Dims{1, 1, 1, 1});
  CHECK(p[0] == doctest::Approx(4.0 / 9.0));
  const T k(Dims{1, 1, 9, 9}, 5.0);
  const T q = avg_pool3x3s2_forward(k);
  CHECK(q.dims() == Dims{1, 1, 5, 5});
  CHECK(q.at(0, 0, 2, 2) == doctest::Approx(5.0));
  CHECK(q.at(0, 0, 0, 0) < 5.0);
}

TEST_CASE("bilinear upsampling") {
  T x(Dims{1, 1, 1, 2});
  x[1] = 1;
  const T y = bilinear_upsample_forward(x, 2);
  REQUIRE(y.dims() == Dims{1, 1, 2, 4});
  CHECK(y.at(0, 0, 0, 0) == 0);
  CHECK(y.at(0, 0, 0, 1) == 0.25);
  CHECK(y.at(0, 0, 0, 2) == 0.75);
  CHECK(y.at(0, 0, 1, 3) == 1);
  Rng rng(4);
  const T r = rand_normal<double>(rng, Dims{1, 2, 3, 3}, 0, 1);
  CHECK(max_abs_diff(bilinear_upsample_forward(r, 1), r) == 0);
  const T c = bilinear_upsample_forward(T(Dims{1, 1, 3, 2}, 2.5), 8);
  CHECK((c.array() - 2.5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("masked cross-entropy") {
  SUBCASE("uniform scores give ln K") {
    const Tensor<float> s(Dims{2, 19, 4, 4}, 0.3f);
    Labels y(2, 4, 4, 7);
    CHECK(std::abs(softmax_ce_masked(s, y).loss - std::log(19.0)) < 1e-6);
  }
  SUBCASE("two-class scalar case") {
    T s(Dims{1, 2, 1, 1});
    s[1] = std::log(3.0);
    const auto r = softmax_ce_masked(s, Labels(1, 1, 1, 1));
    CHECK(r.loss == doctest::Approx(-std::log(0.75)));
    CHECK(r.grad[0] == doctest::Approx(0.25));
    CHECK(r.grad[1] == doctest::Approx(-0.25));
  }
  SUBCASE("ignored pixels get no gradient and sum is mean times count") {
    Rng rng(5);
    const T s = rand_normal<double>(rng, Dims{1, 3, 2, 2}, 0, 1);
    Labels y(1, 2, 2);
    y.v = {0, kIgnoreLabel, 2, 1};
    const auto mean = softmax_ce_masked(s, y);
    const auto sum = softmax_ce_masked(s, y, kIgnoreLabel, LossReduction::kSum);
    CHECK(mean.valid_pixels == 3);
    CHECK(sum.loss == doctest::Approx(3 * mean.loss));
    for (int c = 0; c < 3; ++c) CHECK(mean.grad.plane(0, c)[1] == 0);
  }
  SUBCASE("huge logits stay finite") {
    T s(Dims{1, 2, 1, 1});
    s[0] = 1000, s[1] = -1000;
    const auto r = softmax_ce_masked(s, Labels(1, 1, 1, 1));
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(2000));
  }
  SUBCASE("errors") {
    const T s(Dims{1, 2, 2, 2});
    CHECK_THROWS_AS(softmax_ce_masked(s, Labels(1, 2, 2, kIgnoreLabel)), AllIgnoredError);
    CHECK_THROWS_AS(softmax_ce_masked(s, Labels(1, 2, 2, 5)), std::invalid_argument);
  }
}
