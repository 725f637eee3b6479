#include <doctest.h>

#include <cmath>
#include <numbers>

#include "d2ip/error.hpp"
#include "d2ip/phantom.hpp"
#include "support.hpp"

using namespace d2ip;

namespace {

const Box kThorax{{-0.16, -0.12, 0.0}, {0.16, 0.12, 0.16}};

GridGeometry desk() { return build_grid(16, 16, 8, kThorax); }

// Absolute conductivity of frame i rebuilt from the spec fields alone.
std::vector<double> oracle_sigma(const GridGeometry& g, const LungPhantomSpec& s, int i) {
  const double phase = 0.5 * (1.0 - std::cos(std::numbers::pi * (i - 1) / (s.frames - 1)));
  const double lung = s.lung_start_s + phase * (s.lung_end_s - s.lung_start_s);
  auto inside = [](const Ellipsoid& a, const Ellipsoid& b, double t, const Vec3& x) {
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double c = a.center[k] + t * (b.center[k] - a.center[k]);
      const double r = a.semi_axes[k] + t * (b.semi_axes[k] - a.semi_axes[k]);
      acc += (x[k] - c) * (x[k] - c) / (r * r);
    }
    return acc <= 1.0;
  };
  std::vector<double> sigma(g.voxel_count(), s.background_s);
  for (std::size_t q = 0; q < sigma.size(); ++q) {
    const Vec3 x = g.voxel_center(q);
    const bool left = inside(s.left_exhale, s.left_inhale, phase, x);
    const bool right = inside(s.right_exhale, s.right_inhale, phase, x);
    if (left && s.edema_region && s.edema_region->contains(x)) {
      sigma[q] = *s.edema_s;
    } else if (left || right) {
      sigma[q] = lung;
    }
  }
  return sigma;
}

SensitivityMatrix desk_operator(const GridGeometry& g) {
  const auto e = default_electrodes(g);
  return normalize_sensitivity(
      assemble_sensitivity(g, e, generate_protocol(e, ProtocolScheme::adjacent_in_layer)));
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("healthy lung conductivity runs from 0.20 to 0.105") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::healthy(g, 20);
    CHECK(lung_conductivity(spec, 1) == 0.20);
    CHECK(lung_conductivity(spec, 20) == doctest::Approx(0.105).epsilon(1e-15));
    CHECK(spec.background_s == 0.24);

    const auto seq = make_case1(g, 20);
    CHECK(seq.frame_count() == 20);
    CHECK(seq.reference_mode == ReferenceMode::empty_background);
    CHECK(seq.is_ground_truth);
    const auto m1 = lung_masks(g, spec, 1);
    const auto mT = lung_masks(g, spec, 20);
    for (std::size_t q = 0; q < g.voxel_count(); ++q) {
      if (m1.left[q] || m1.right[q]) CHECK(seq.frames[0][q] == doctest::Approx(0.20 - 0.24));
      if (mT.left[q] || mT.right[q]) CHECK(seq.frames[19][q] == doctest::Approx(0.105 - 0.24));
    }
  }

  TEST_CASE("background voxels do not change") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::healthy(g, 10);
    const auto seq = make_case1(g, spec);
    const auto full = lung_masks(g, spec, 10);
    for (std::size_t q = 0; q < g.voxel_count(); ++q) {
      if (full.left[q] || full.right[q]) continue;
      for (const auto& f : seq.frames) CHECK(f[q] == 0.0);
    }
  }

  TEST_CASE("midpoint of an odd-length sequence is half way") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::healthy(g, 21);
    CHECK(breathing_phase(11, 21) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(lung_conductivity(spec, 11) == doctest::Approx(0.1525).epsilon(1e-14));
    CHECK(breathing_phase(1, 21) == 0.0);
    CHECK(breathing_phase(21, 21) == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("frames match an independent rebuild") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::healthy(g, 6);
    const auto seq = make_case1(g, spec);
    for (int i = 1; i <= 6; ++i) {
      auto sigma = oracle_sigma(g, spec, i);
      for (auto& v : sigma) v -= 0.24;
      CHECK(seq.frames[i - 1] == sigma);
    }
  }

  TEST_CASE("case 2 has T - 1 differential frames against frame 1") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::edema(g, 20);
    CHECK(spec.lung_start_s == 0.14);
    CHECK(spec.lung_end_s == 0.0835);
    CHECK(spec.edema_s == std::optional<double>(0.24));
    const auto seq = make_case2(g, spec);
    CHECK(seq.frame_count() == 19);
    CHECK(seq.reference_mode == ReferenceMode::first_frame);

    const auto s1 = oracle_sigma(g, spec, 1);
    const auto s2 = oracle_sigma(g, spec, 2);
    for (std::size_t q = 0; q < s1.size(); ++q) CHECK(seq.frames[0][q] == s2[q] - s1[q]);
  }

  TEST_CASE("edema voxels carry no differential signal") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::edema(g, 8);
    const auto seq = make_case2(g, spec);
    std::size_t edema_voxels = 0;
    for (int i = 2; i <= 8; ++i) {
      const auto m = lung_masks(g, spec, i);
      for (std::size_t q = 0; q < g.voxel_count(); ++q) {
        if (!m.edema[q]) continue;
        ++edema_voxels;
        CHECK(seq.frames[i - 2][q] == 0.0);
      }
    }
    CHECK(edema_voxels > 0);
  }

  TEST_CASE("mask invariants") {
    const GridGeometry g = desk();
    const auto spec = LungPhantomSpec::edema(g, 12);
    std::size_t previous = 0;
    for (int i = 1; i <= 12; ++i) {
      const auto m = lung_masks(g, spec, i);
      std::size_t lung = 0;
      for (std::size_t q = 0; q < g.voxel_count(); ++q) {
        CHECK_FALSE((m.left[q] && m.right[q]));
        if (m.edema[q]) CHECK(m.left[q]);
        lung += (m.left[q] || m.right[q]) ? 1 : 0;
      }
      CHECK(lung >= previous);
      previous = lung;
    }
  }

  TEST_CASE("generation is deterministic") {
    const GridGeometry g = desk();
    CHECK(make_case1(g, 5).frames == make_case1(g, 5).frames);
    CHECK(make_case2(g, 5).frames == make_case2(g, 5).frames);
  }

  TEST_CASE("invalid phantoms are rejected") {
    const GridGeometry g = desk();
    CHECK_THROWS_AS(make_case1(g, 1), InvalidArgument);
    auto spec = LungPhantomSpec::healthy(g, 5);
    spec.left_inhale.semi_axes[0] = 1.0;
    CHECK_THROWS_AS(make_case1(g, spec), InvalidArgument);
    auto bad = LungPhantomSpec::healthy(g, 5);
    bad.lung_end_s = 0.0;
    CHECK_THROWS_AS(make_case1(g, bad), InvalidArgument);
    auto no_region = LungPhantomSpec::edema(g, 5);
    no_region.edema_region.reset();
    CHECK_THROWS_AS(make_case2(g, no_region), InvalidArgument);
  }

  TEST_CASE("synthesized measurements follow the linear model") {
    const GridGeometry g = desk();
    const auto J = desk_operator(g);
    const auto seq = make_case1(g, 20);
    const auto V = synthesize_measurements(seq, J, kNoiseFree, 1);
    CHECK(V.frame_count() == 20);
    CHECK(V.measurements() == J.measurements());
    for (int i = 0; i < 20; ++i) CHECK(V.frames[i].frame_index == i + 1);

    ConductivitySequence zero = seq;
    zero.frames.assign(1, std::vector<double>(g.voxel_count(), 0.0));
    const auto Z = synthesize_measurements(zero, J, kNoiseFree, 1);
    for (double v : Z.frames[0].values) CHECK(v == 0.0);

    ConductivitySequence doubled = seq;
    for (auto& f : doubled.frames) {
      for (auto& v : f) v *= 2.0;
    }
    const auto W = synthesize_measurements(doubled, J, kNoiseFree, 1);
    for (std::size_t m = 0; m < V.measurements(); ++m) {
      CHECK(W.frames[7].values[m] == doctest::Approx(2.0 * V.frames[7].values[m]).epsilon(1e-12));
    }
  }

  TEST_CASE("noisy synthesis uses seed + i per frame") {
    const GridGeometry g = desk();
    const auto J = desk_operator(g);
    const auto seq = make_case1(g, 4);
    const auto clean = synthesize_measurements(seq, J, kNoiseFree, 0);
    const auto noisy = synthesize_measurements(seq, J, 30.0, 5);
    for (int i = 0; i < 4; ++i) {
      CHECK(noisy.frames[i].values == add_noise(clean.frames[i], 30.0, 5 + i + 1).values);
    }
    CHECK(noisy.snr_db == 30.0);
    CHECK(noisy.seed == 5);
  }

  TEST_CASE("shape mismatch between phantom and operator") {
    const GridGeometry g = desk();
    const auto J = desk_operator(build_grid(8, 8, 8, kThorax));
    CHECK_THROWS_AS(synthesize_measurements(make_case1(g, 3), J, kNoiseFree, 0), InvalidArgument);
  }
}
