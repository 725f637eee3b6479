#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "d2ip/error.hpp"
#include "d2ip/geometry.hpp"
#include "support.hpp"

using namespace d2ip;

namespace {

const Box kUnit = Box::unit();

double angle_of(const Vec3& p, const Box& box) {
  const Vec3 c = box.center();
  // Undo the ellipse stretch so the parametric angle is recovered.
  return std::atan2((p[1] - c[1]) / (0.5 * box.span(1)), (p[0] - c[0]) / (0.5 * box.span(0)));
}

double wrap_degrees(double rad) {
  double d = rad * 180.0 / std::numbers::pi;
  while (d < 0) d += 360.0;
  while (d >= 360.0) d -= 360.0;
  return d;
}

// Independent enumeration of the adjacent/adjacent ring protocol.
std::vector<Quadruple> brute_force_ring(int n, int offset) {
  std::vector<Quadruple> out;
  for (int d = 0; d < n; ++d) {
    const int a = offset + d, b = offset + (d + 1) % n;
    for (int m = 0; m < n; ++m) {
      const int p = offset + m, q = offset + (m + 1) % n;
      const std::set<int> used{a, b, p, q};
      if (used.size() == 4) out.push_back({a, b, p, q});
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("voxel count is the product of the dimensions") {
    CHECK(build_grid(2, 2, 2, kUnit).voxel_count() == 8);
    const Box thorax{{-0.16, -0.12, 0.0}, {0.16, 0.12, 0.16}};
    CHECK(build_grid(32, 32, 32, thorax).voxel_count() == 32768);
  }

  TEST_CASE("corner voxel center sits half a pitch inside the box") {
    const GridGeometry g = build_grid(16, 16, 8, kUnit);
    const Vec3 pitch = g.pitch();
    CHECK(pitch[0] == doctest::Approx(1.0 / 16));
    CHECK(pitch[1] == doctest::Approx(1.0 / 16));
    CHECK(pitch[2] == doctest::Approx(1.0 / 8));
    const Vec3 corner = g.voxel_center(0, 0, 0);
    CHECK(corner[0] == doctest::Approx(0.5 / 16));
    CHECK(corner[1] == doctest::Approx(0.5 / 16));
    CHECK(corner[2] == doctest::Approx(0.5 / 8));
    const Vec3 far = g.voxel_center(15, 15, 7);
    CHECK(far[0] == doctest::Approx(1.0 - 0.5 / 16));
    CHECK(far[2] == doctest::Approx(1.0 - 0.5 / 8));
    // Linear index and (r, c, p) address the same center.
    const Vec3 a = g.voxel_center(3, 5, 2);
    const Vec3 b = g.voxel_center(g.index(3, 5, 2));
    CHECK(a == b);
  }

  TEST_CASE("invalid grids are rejected") {
    CHECK_THROWS_AS(build_grid(0, 2, 2, kUnit), InvalidArgument);
    CHECK_THROWS_AS(build_grid(2, -1, 2, kUnit), InvalidArgument);
    CHECK_THROWS_AS(build_grid(2, 2, 2, Box{{0, 0, 0}, {1, 0, 1}}), InvalidArgument);
    CHECK_THROWS_AS(build_grid(2, 2, 2, Box{{0, 0, 0}, {1, 1, -1}}), InvalidArgument);
  }

  TEST_CASE("default belt has 32 electrodes in two rings") {
    const GridGeometry g = build_grid(16, 16, 8, kUnit);
    const ElectrodeArray e = default_electrodes(g);
    CHECK(e.size() == 32);
    CHECK(e.layers == 2);
    CHECK(e.per_layer == 16);
    const double heights[] = {0.3, 0.7};
    CHECK(place_electrodes(g, 16, 2, heights).size() == 32);
  }

  TEST_CASE("four electrodes land at the quarter angles") {
    const GridGeometry g = build_grid(8, 8, 8, Box{{-1, -2, 0}, {1, 2, 1}});
    const double h[] = {0.5};
    const ElectrodeArray e = place_electrodes(g, 4, 1, h);
    REQUIRE(e.size() == 4);
    const double expected[] = {0.0, 90.0, 180.0, 270.0};
    for (int k = 0; k < 4; ++k) {
      CHECK(wrap_degrees(angle_of(e.positions[k], g.extent())) ==
            doctest::Approx(expected[k]).epsilon(1e-9));
    }
  }

  TEST_CASE("adjacent electrodes are 22.5 degrees apart") {
    const GridGeometry g = build_grid(16, 16, 8, kUnit);
    const ElectrodeArray e = default_electrodes(g);
    for (int l = 0; l < 2; ++l) {
      for (int k = 0; k < 16; ++k) {
        const double a = angle_of(e.positions[l * 16 + k], g.extent());
        const double b = angle_of(e.positions[l * 16 + (k + 1) % 16], g.extent());
        CHECK(wrap_degrees(b - a) == doctest::Approx(22.5));
      }
    }
  }

  TEST_CASE("electrodes lie on the lateral boundary") {
    const Box box{{-0.16, -0.12, 0.0}, {0.16, 0.12, 0.16}};
    const GridGeometry g = build_grid(16, 16, 8, box);
    for (const auto& p : default_electrodes(g).positions) {
      const double ex = p[0] / 0.16, ey = p[1] / 0.12;
      CHECK(ex * ex + ey * ey >= 1.0 - 1e-12);
    }
  }

  TEST_CASE("electrode angles do not depend on grid resolution") {
    const Box box{{-0.16, -0.12, 0.0}, {0.16, 0.12, 0.16}};
    const auto coarse = default_electrodes(build_grid(8, 8, 8, box));
    const auto fine = default_electrodes(build_grid(32, 24, 16, box));
    REQUIRE(coarse.size() == fine.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) CHECK(coarse.positions[i] == fine.positions[i]);
  }

  TEST_CASE("electrode placement errors") {
    const GridGeometry g = build_grid(4, 4, 4, kUnit);
    const double outside[] = {1.5};
    CHECK_THROWS_AS(place_electrodes(g, 8, 1, outside), InvalidArgument);
    const double ok[] = {0.5};
    CHECK_THROWS_AS(place_electrodes(g, 3, 1, ok), InvalidArgument);
  }

  TEST_CASE("single ring protocol counts match brute force") {
    const GridGeometry g = build_grid(4, 4, 4, kUnit);
    const double h[] = {0.5};
    for (int n : {4, 16}) {
      const auto proto = generate_protocol(place_electrodes(g, n, 1, h),
                                           ProtocolScheme::adjacent_in_layer);
      const auto oracle = brute_force_ring(n, 0);
      CHECK(proto.size() == oracle.size());
      CHECK(proto.pairs == oracle);
    }
    CHECK(brute_force_ring(16, 0).size() == 208);
    CHECK(brute_force_ring(4, 0).size() == 4);
  }

  TEST_CASE("default protocol has M = 416 and never reuses a terminal") {
    const GridGeometry g = build_grid(16, 16, 8, kUnit);
    const auto e = default_electrodes(g);
    const auto proto = generate_protocol(e, ProtocolScheme::adjacent_in_layer);
    auto oracle = brute_force_ring(16, 0);
    const auto ring2 = brute_force_ring(16, 16);
    oracle.insert(oracle.end(), ring2.begin(), ring2.end());
    CHECK(proto.size() == 416);
    CHECK(proto.pairs == oracle);
    for (const auto& q : proto.pairs) {
      const std::set<int> used{q.drive_source, q.drive_sink, q.measure_plus, q.measure_minus};
      CHECK(used.size() == 4);
    }
    const auto again = generate_protocol(e, ProtocolScheme::adjacent_in_layer);
    CHECK(again.pairs == proto.pairs);
    CHECK(again.fingerprint() == proto.fingerprint());
  }

  TEST_CASE("cross-layer protocol measures on both rings") {
    const GridGeometry g = build_grid(16, 16, 8, kUnit);
    const auto proto = generate_protocol(default_electrodes(g), ProtocolScheme::cross_layer);
    // Each of the 32 drives sees 13 in-ring and 16 other-ring measure pairs.
    CHECK(proto.size() == 32 * (13 + 16));
    const double h[] = {0.5};
    CHECK_THROWS_AS(generate_protocol(place_electrodes(g, 8, 1, h), ProtocolScheme::cross_layer),
                    InvalidArgument);
  }

  TEST_CASE("scheme names round-trip") {
    for (auto s : {ProtocolScheme::adjacent_in_layer, ProtocolScheme::cross_layer}) {
      CHECK(protocol_scheme_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(protocol_scheme_from_string("opposite"), InvalidArgument);
  }

  TEST_CASE("vectorize follows the plane-slowest, column-fastest rule") {
    const GridGeometry one = build_grid(1, 1, 1, kUnit);
    Volume v1(1, 1, 1, 4.25);
    CHECK(vectorize(v1, one) == std::vector<double>{4.25});

    const GridGeometry g = build_grid(2, 2, 1, kUnit);
    Volume v(2, 2, 1);
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) v(r, c, 0) = r * 2 + c;
    }
    CHECK(vectorize(v, g) == std::vector<double>{0, 1, 2, 3});

    const GridGeometry h = build_grid(3, 4, 5, kUnit);
    const Volume x = testing::random_volume(3, 4, 5, 11);
    const auto flat = vectorize(x, h);
    for (int p = 0; p < 5; ++p) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) CHECK(flat[(p * 3 + r) * 4 + c] == x(r, c, p));
      }
    }
  }

  TEST_CASE("devectorize inverts vectorize") {
    for (auto [r, c, p] : {std::tuple{1, 1, 1}, std::tuple{2, 3, 4}, std::tuple{16, 16, 8}}) {
      const GridGeometry g = build_grid(r, c, p, kUnit);
      const Volume x = testing::random_volume(r, c, p, 5);
      CHECK(devectorize(vectorize(x, g), g) == x);
      const auto flat = testing::random_vector(g.voxel_count(), 6);
      CHECK(vectorize(devectorize(flat, g), g) == flat);
    }
  }

  TEST_CASE("vectorize rejects mismatched shapes") {
    const GridGeometry g = build_grid(2, 2, 2, kUnit);
    CHECK_THROWS_AS(vectorize(Volume(2, 2, 3), g), InvalidArgument);
    const std::vector<double> short_vec(7, 0.0);
    CHECK_THROWS_AS(devectorize(short_vec, g), InvalidArgument);
  }
}
