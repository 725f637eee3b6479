#include <doctest.h>

#include <cmath>
#include <functional>

#include "d2ip/error.hpp"
#include "d2ip/tensor_ops.hpp"
#include "support.hpp"

using namespace d2ip;
using namespace d2ip::nn;

namespace {

struct Leaf {
  Shape shape;
  std::vector<double> values;
};

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

Var leaf_var(Tape& t, const Leaf& l) { return t.push(l.shape, l.values, {}); }

double evaluate(const std::vector<Leaf>& leaves, const Build& build,
                const std::vector<double>& weights) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& l : leaves) vars.push_back(leaf_var(t, l));
  const auto out = t.value(build(t, vars));
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
  return s;
}

// Compares reverse-mode gradients of sum(w * out) with central differences
// for every leaf entry.
void gradient_check(std::vector<Leaf> leaves, const Build& build, double tol = 1e-6) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& l : leaves) vars.push_back(leaf_var(t, l));
  const Var out = build(t, vars);
  const auto weights = testing::random_vector(t.shape(out).size(), 1234);
  std::vector<std::vector<double>> none;
  t.backward(out, weights, none);

  const double h = 1e-6;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const auto analytic = t.grad(vars[k]);
    for (std::size_t i = 0; i < leaves[k].values.size(); ++i) {
      const double saved = leaves[k].values[i];
      leaves[k].values[i] = saved + h;
      const double fp = evaluate(leaves, build, weights);
      leaves[k].values[i] = saved - h;
      const double fm = evaluate(leaves, build, weights);
      leaves[k].values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
      CHECK(std::abs(numeric - analytic[i]) / denom < tol);
    }
  }
}

Leaf random_leaf(Shape s, std::uint64_t seed) { return {s, testing::random_vector(s.size(), seed)}; }

Leaf flat_leaf(std::size_t n, std::uint64_t seed) {
  return {{static_cast<int>(n), 1, 1, 1}, testing::random_vector(n, seed)};
}

// Direct loop over the convolution definition with zero padding.
std::vector<double> conv_oracle(const Leaf& x, const std::vector<double>& w,
                                const std::vector<double>& b, const ConvSpec& spec) {
  const Shape in = x.shape;
  const Shape out = spec.output_shape(in);
  const int cin_g = spec.in_channels / spec.groups;
  const int cout_g = spec.out_channels / spec.groups;
  const int k = spec.kernel, pad = spec.padding();
  std::vector<double> y(out.size(), 0.0);
  for (int co = 0; co < out.channels; ++co) {
    const int g = co / cout_g;
    for (int od = 0; od < out.depth; ++od) {
      for (int oh = 0; oh < out.height; ++oh) {
        for (int ow = 0; ow < out.width; ++ow) {
          double s = b.empty() ? 0.0 : b[co];
          for (int cg = 0; cg < cin_g; ++cg) {
            const int ci = g * cin_g + cg;
            for (int kd = 0; kd < k; ++kd) {
              for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                  const int id = od * spec.stride - pad + kd * spec.dilation;
                  const int ih = oh * spec.stride - pad + kh * spec.dilation;
                  const int iw = ow * spec.stride - pad + kw * spec.dilation;
                  if (id < 0 || ih < 0 || iw < 0 || id >= in.depth || ih >= in.height ||
                      iw >= in.width) {
                    continue;
                  }
                  const double xv =
                      x.values[((static_cast<std::size_t>(ci) * in.depth + id) * in.height + ih) *
                                   in.width +
                               iw];
                  const double wv = w[(((static_cast<std::size_t>(co) * cin_g + cg) * k + kd) * k +
                                       kh) *
                                          k +
                                      kw];
                  s += xv * wv;
                }
              }
            }
          }
          y[((static_cast<std::size_t>(co) * out.depth + od) * out.height + oh) * out.width + ow] =
              s;
        }
      }
    }
  }
  return y;
}

// Linear interpolation weights of x2 upsampling with half-pixel centers.
double upsample_oracle(const Leaf& x, int c, int d, int h, int w) {
  auto taps = [](int o, int n) {
    double src = (o + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, n - 1);
    const double f = src - i0;
    return std::array<std::pair<int, double>, 2>{{{i0, 1.0 - f}, {i1, f}}};
  };
  const Shape s = x.shape;
  double v = 0.0;
  for (auto [id, wd] : taps(d, s.depth)) {
    for (auto [ih, wh] : taps(h, s.height)) {
      for (auto [iw, ww] : taps(w, s.width)) {
        v += wd * wh * ww *
             x.values[((static_cast<std::size_t>(c) * s.depth + id) * s.height + ih) * s.width + iw];
      }
    }
  }
  return v;
}

}  // namespace

TEST_SUITE("tensor_ops") {
  TEST_CASE("convolution matches the direct definition") {
    struct Case {
      ConvSpec spec;
      Shape in;
      bool bias;
    };
    const std::vector<Case> cases{
        {{2, 3, 3, 1, 1, 1}, {2, 4, 5, 3}, true},
        {{2, 3, 3, 2, 1, 1}, {2, 4, 4, 4}, true},
        {{3, 2, 3, 1, 2, 1}, {3, 5, 4, 6}, false},
        {{4, 4, 3, 1, 1, 4}, {4, 3, 4, 5}, true},
        {{4, 4, 3, 2, 1, 4}, {4, 4, 4, 4}, true},
        {{3, 5, 1, 1, 1, 1}, {3, 2, 3, 4}, true},
        {{3, 5, 1, 2, 1, 1}, {3, 4, 4, 2}, false},
    };
    int seed = 1;
    for (const auto& c : cases) {
      const Leaf x = random_leaf(c.in, seed++);
      const auto w = testing::random_vector(c.spec.weight_size(), seed++);
      const auto b = c.bias ? testing::random_vector(c.spec.out_channels, seed++)
                            : std::vector<double>{};
      Tape t;
      const Var xv = t.constant(x.shape, x.values);
      const Var wv = t.constant({static_cast<int>(w.size()), 1, 1, 1}, w);
      const Var bv = c.bias ? t.constant({c.spec.out_channels, 1, 1, 1}, b) : -1;
      const Var y = conv3d(t, xv, wv, bv, c.spec);
      CHECK(t.shape(y) == c.spec.output_shape(c.in));
      const auto expect = conv_oracle(x, w, b, c.spec);
      const auto got = t.value(y);
      REQUIRE(got.size() == expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]));
    }
  }

  TEST_CASE("convolution gradients") {
    for (const ConvSpec spec : {ConvSpec{2, 3, 3, 1, 1, 1}, ConvSpec{2, 2, 3, 2, 1, 2},
                                ConvSpec{2, 2, 3, 1, 2, 1}, ConvSpec{3, 2, 1, 1, 1, 1}}) {
      const Shape in{spec.in_channels, 4, 3, 4};
      gradient_check({random_leaf(in, 5), flat_leaf(spec.weight_size(), 6),
                      flat_leaf(static_cast<std::size_t>(spec.out_channels), 7)},
                     [spec](Tape& t, const std::vector<Var>& v) {
                       return conv3d(t, v[0], v[1], v[2], spec);
                     });
    }
  }

  TEST_CASE("layer norm normalizes over channels at each position") {
    const Shape s{4, 2, 3, 2};
    const Leaf x = random_leaf(s, 9);
    Tape t;
    const std::vector<double> ones(4, 1.0), zeros(4, 0.0);
    const Var y = layer_norm(t, t.constant(s, x.values), t.constant({4, 1, 1, 1}, ones),
                             t.constant({4, 1, 1, 1}, zeros));
    const auto v = t.value(y);
    for (std::size_t p = 0; p < s.spatial(); ++p) {
      double mean = 0.0, var = 0.0;
      for (int c = 0; c < 4; ++c) mean += v[c * s.spatial() + p];
      mean /= 4;
      for (int c = 0; c < 4; ++c) var += std::pow(v[c * s.spatial() + p] - mean, 2);
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var / 4 == doctest::Approx(1.0).epsilon(1e-3));
    }
    gradient_check({x, flat_leaf(4, 10), flat_leaf(4, 11)},
                   [](Tape& tp, const std::vector<Var>& a) { return layer_norm(tp, a[0], a[1], a[2]); });
  }

  TEST_CASE("pointwise nonlinearities") {
    const Leaf x = random_leaf({2, 2, 2, 3}, 12);
    Tape t;
    const Var xv = t.constant(x.shape, x.values);
    const auto sg = t.value(sigmoid(t, xv));
    const auto sl = t.value(silu(t, xv));
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.values[i]));
      CHECK(sg[i] == doctest::Approx(s));
      CHECK(sl[i] == doctest::Approx(x.values[i] * s));
    }
    gradient_check({x}, [](Tape& tp, const std::vector<Var>& a) { return sigmoid(tp, a[0]); });
    gradient_check({x}, [](Tape& tp, const std::vector<Var>& a) { return silu(tp, a[0]); });
  }

  TEST_CASE("channel and spatial gating, pooling and concatenation") {
    const Shape s{3, 2, 2, 2};
    const Leaf x = random_leaf(s, 13);
    const Leaf y = random_leaf(s, 14);
    const Leaf ch = random_leaf({3, 1, 1, 1}, 15);
    const Leaf sp = random_leaf({1, 2, 2, 2}, 16);

    Tape t;
    const Var pooled = global_avg_pool(t, t.constant(s, x.values));
    for (int c = 0; c < 3; ++c) {
      double m = 0.0;
      for (int i = 0; i < 8; ++i) m += x.values[c * 8 + i];
      CHECK(t.value(pooled)[c] == doctest::Approx(m / 8));
    }

    gradient_check({x, y}, [](Tape& tp, const std::vector<Var>& a) { return add(tp, a[0], a[1]); });
    gradient_check({x, ch},
                   [](Tape& tp, const std::vector<Var>& a) { return scale_channels(tp, a[0], a[1]); });
    gradient_check({x, sp},
                   [](Tape& tp, const std::vector<Var>& a) { return gate_spatial(tp, a[0], a[1]); });
    gradient_check({x}, [](Tape& tp, const std::vector<Var>& a) { return global_avg_pool(tp, a[0]); });
    gradient_check({x, random_leaf({2, 2, 2, 2}, 17)}, [](Tape& tp, const std::vector<Var>& a) {
      const Var parts[] = {a[0], a[1]};
      return concat_channels(tp, parts);
    });
  }

  TEST_CASE("trilinear upsampling") {
    const Leaf x = random_leaf({2, 2, 3, 4}, 18);
    Tape t;
    const Var y = upsample2x(t, t.constant(x.shape, x.values));
    const Shape o = t.shape(y);
    CHECK(o == Shape{2, 4, 6, 8});
    const auto v = t.value(y);
    for (int c = 0; c < 2; ++c) {
      for (int d = 0; d < 4; ++d) {
        for (int h = 0; h < 6; ++h) {
          for (int w = 0; w < 8; ++w) {
            CHECK(v[((static_cast<std::size_t>(c) * 4 + d) * 6 + h) * 8 + w] ==
                  doctest::Approx(upsample_oracle(x, c, d, h, w)));
          }
        }
      }
    }
    gradient_check({x}, [](Tape& tp, const std::vector<Var>& a) { return upsample2x(tp, a[0]); });
  }

  TEST_CASE("parameter leaves feed the gradient slots") {
    const std::vector<double> w = testing::random_vector(2 * 1 * 27, 19);
    const Leaf x = random_leaf({1, 3, 3, 3}, 20);
    Tape t;
    const Var wv = t.parameter(0, w);
    const Var y = conv3d(t, t.constant(x.shape, x.values), wv, -1, ConvSpec{1, 2, 3, 1, 1, 1});
    std::vector<std::vector<double>> grads{std::vector<double>(w.size(), 0.0)};
    const std::vector<double> seed(t.shape(y).size(), 1.0);
    t.backward(y, seed, grads);
    // d(sum y)/dw equals the sum of the inputs each tap touches; the centre
    // tap touches every voxel.
    double total = 0.0;
    for (double v : x.values) total += v;
    CHECK(grads[0][13] == doctest::Approx(total));
    CHECK(grads[0][27 + 13] == doctest::Approx(total));
  }

  TEST_CASE("shape errors") {
    Tape t;
    CHECK_THROWS_AS(t.constant({2, 2, 2, 2}, std::vector<double>(3)), InvalidArgument);
    const Var x = t.constant({2, 2, 2, 2}, std::vector<double>(16, 1.0));
    const Var w = t.constant({10, 1, 1, 1}, std::vector<double>(10, 1.0));
    CHECK_THROWS_AS(conv3d(t, x, w, -1, ConvSpec{2, 2, 3, 1, 1, 1}), InvalidArgument);
  }
}
