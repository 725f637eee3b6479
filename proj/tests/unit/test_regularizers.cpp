#include <doctest.h>

#include <cmath>

#include "d2ip/error.hpp"
#include "d2ip/regularizers.hpp"
#include "support.hpp"

using namespace d2ip;

namespace {

constexpr double kEps = 1e-8;

Volume from_values(int r, int c, int p, std::vector<double> values) {
  Volume v(r, c, p);
  std::copy(values.begin(), values.end(), v.data().begin());
  return v;
}

// Central differences of f at `count` coordinates spread over the volume.
template <class F>
void check_gradient(const Volume& x, F f, std::span<const double> analytic, int count) {
  const double h = 1e-6;
  int checked = 0;
  for (std::size_t q = 0; q < x.size() && checked < count; q += std::max<std::size_t>(1, x.size() / count)) {
    Volume plus = x, minus = x;
    plus.data()[q] += h;
    minus.data()[q] -= h;
    const double numeric = (f(plus) - f(minus)) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[q]), 1e-6});
    CHECK(std::abs(numeric - analytic[q]) / denom < 1e-4);
    ++checked;
  }
  CHECK(checked >= std::min<int>(count, static_cast<int>(x.size())));
}

}  // namespace

TEST_SUITE("regularizers") {
  TEST_CASE("spatial TV of a constant volume is sqrt(eps)") {
    CHECK(spatial_tv(Volume(4, 3, 2, 0.7), kEps) == doctest::Approx(1e-4).epsilon(1e-12));
  }

  TEST_CASE("spatial TV of a two-voxel step") {
    const Volume v = from_values(2, 1, 1, {0.0, 1.0});
    const double expected = 0.5 * (std::sqrt(1.0 + kEps) + std::sqrt(kEps));
    CHECK(spatial_tv(v, kEps) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(spatial_tv(v, kEps) == doctest::Approx(0.50005).epsilon(1e-6));
  }

  TEST_CASE("spatial TV scales with |a| as eps vanishes") {
    const Volume v = testing::random_volume(4, 4, 4, 3);
    Volume a = v;
    for (auto& x : a.data()) x *= 3.0;
    CHECK(testing::rel_diff(spatial_tv(a, 1e-12), 3.0 * spatial_tv(v, 1e-12)) < 1e-4);
    Volume neg = v;
    for (auto& x : neg.data()) x *= -3.0;
    CHECK(testing::rel_diff(spatial_tv(neg, 1e-12), 3.0 * spatial_tv(v, 1e-12)) < 1e-4);
  }

  TEST_CASE("spatial TV is invariant under exchanging axes") {
    const Volume v = testing::random_volume(3, 5, 4, 8);
    Volume t(5, 3, 4);  // rows <-> cols
    Volume s(4, 5, 3);  // rows <-> planes
    for (int p = 0; p < 4; ++p) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 5; ++c) {
          t(c, r, p) = v(r, c, p);
          s(p, c, r) = v(r, c, p);
        }
      }
    }
    CHECK(testing::rel_diff(spatial_tv(v, kEps), spatial_tv(t, kEps)) < 1e-13);
    CHECK(testing::rel_diff(spatial_tv(v, kEps), spatial_tv(s, kEps)) < 1e-13);
  }

  TEST_CASE("temporal TV examples") {
    FrameHistory empty;
    const Volume cur = testing::random_volume(2, 2, 2, 1);
    CHECK(temporal_tv(empty, cur, kEps) == 0.0);

    FrameHistory same;
    same.append(cur);
    CHECK(temporal_tv(same, cur, kEps) == doctest::Approx(8 * 1e-4).epsilon(1e-12));

    // Current frame i = 3 with frames 1 and 2 in the history.
    const Volume f1 = testing::random_volume(2, 2, 2, 2);
    const Volume f2 = testing::random_volume(2, 2, 2, 3);
    FrameHistory two;
    two.append(f1);
    two.append(f2);
    const double a1 = std::exp(-2.0), a2 = std::exp(-1.0);
    CHECK(a1 == doctest::Approx(0.135335).epsilon(1e-6));
    CHECK(a2 == doctest::Approx(0.367879).epsilon(1e-6));
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t q = 0; q < 8; ++q) {
      s1 += std::sqrt(std::pow(cur.data()[q] - f1.data()[q], 2) + kEps);
      s2 += std::sqrt(std::pow(cur.data()[q] - f2.data()[q], 2) + kEps);
    }
    const double expected = (a1 * s1 + a2 * s2) / (a1 + a2);
    CHECK(temporal_tv(two, cur, kEps) == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("tv4d combines the two terms") {
    const Volume cur = from_values(2, 1, 1, {0.0, 1.0});
    TVWeights w;
    CHECK(w.lambda_tv == 0.002);
    CHECK(w.lambda_s == 1.0);
    CHECK(w.lambda_t == 0.1);
    CHECK(w.epsilon == 1e-8);

    FrameHistory empty;
    CHECK(tv4d(empty, cur, w) == doctest::Approx(spatial_tv(cur, kEps)).epsilon(1e-15));

    FrameHistory h;
    h.append(from_values(2, 1, 1, {0.0, 0.0}));
    const double spatial = 0.5 * (std::sqrt(1.0 + kEps) + std::sqrt(kEps));
    const double temporal = std::sqrt(kEps) + std::sqrt(1.0 + kEps);
    CHECK(tv4d(h, cur, w) == doctest::Approx(1.0 * spatial + 0.1 * temporal).epsilon(1e-14));

    TVWeights zero = w;
    zero.lambda_s = 0.0;
    zero.lambda_t = 0.0;
    CHECK(tv4d(h, cur, zero) == 0.0);
  }

  TEST_CASE("decay weights") {
    CHECK(decay_weight(1, 2) == doctest::Approx(0.367879).epsilon(1e-6));
    CHECK(decay_weight(1, 4) == doctest::Approx(0.049787).epsilon(1e-5));
    for (int j = 1; j < 7; ++j) {
      CHECK(decay_weight(j, 8) / decay_weight(j + 1, 8) == doctest::Approx(std::exp(-1.0)));
      CHECK(decay_weight(j, 8) < decay_weight(j + 1, 8));
    }
    CHECK_THROWS_AS(decay_weight(2, 2), InvalidArgument);
    CHECK_THROWS_AS(decay_weight(3, 2), InvalidArgument);
    CHECK_THROWS_AS(decay_weight(0, 2), InvalidArgument);
  }

  TEST_CASE("regularizers are nonnegative") {
    for (int s = 0; s < 10; ++s) {
      const Volume v = testing::random_volume(3, 3, 3, 50 + s);
      FrameHistory h;
      h.append(testing::random_volume(3, 3, 3, 70 + s));
      CHECK(spatial_tv(v, kEps) >= 0.0);
      CHECK(temporal_tv(h, v, kEps) >= 0.0);
      CHECK(tv4d(h, v, TVWeights{}) >= 0.0);
    }
  }

  TEST_CASE("analytic gradients match central differences") {
    const Volume x = testing::random_volume(4, 4, 4, 21);
    FrameHistory h;
    h.append(testing::random_volume(4, 4, 4, 22));
    h.append(testing::random_volume(4, 4, 4, 23));
    h.append(testing::random_volume(4, 4, 4, 24));

    std::vector<double> g(64, 0.0);
    spatial_tv(x, kEps, g);
    check_gradient(x, [](const Volume& v) { return spatial_tv(v, kEps); }, g, 64);

    std::fill(g.begin(), g.end(), 0.0);
    temporal_tv(h, x, kEps, g);
    check_gradient(x, [&](const Volume& v) { return temporal_tv(h, v, kEps); }, g, 64);

    std::fill(g.begin(), g.end(), 0.0);
    const TVWeights w;
    tv4d(h, x, w, g);
    check_gradient(x, [&](const Volume& v) { return tv4d(h, v, w); }, g, 64);
  }

  TEST_CASE("gradients accumulate with the given scale") {
    const Volume x = testing::random_volume(3, 3, 3, 4);
    std::vector<double> once(27, 0.0), scaled(27, 1.0);
    spatial_tv(x, kEps, once);
    spatial_tv(x, kEps, scaled, 2.5);
    for (std::size_t q = 0; q < 27; ++q) {
      CHECK(scaled[q] == doctest::Approx(1.0 + 2.5 * once[q]).epsilon(1e-13));
    }
  }

  TEST_CASE("shape checks") {
    const Volume x(2, 2, 2);
    std::vector<double> wrong(7);
    CHECK_THROWS_AS(spatial_tv(x, kEps, wrong), InvalidArgument);
    FrameHistory h;
    h.append(Volume(2, 2, 2));
    CHECK_THROWS_AS(h.append(Volume(2, 2, 3)), InvalidArgument);
    CHECK_THROWS_AS(temporal_tv(h, Volume(3, 2, 2), kEps), InvalidArgument);
  }
}
