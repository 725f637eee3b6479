#include <doctest.h>

#include <cmath>
#include <sstream>

#include "d2ip/error.hpp"
#include "d2ip/metrics.hpp"
#include "support.hpp"

using namespace d2ip;

namespace {

std::vector<double> affine(const std::vector<double>& x, double a, double b) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = a * x[i] + b;
  return y;
}

ConductivitySequence sequence_of(const GridGeometry& g, int frames, std::uint64_t seed) {
  ConductivitySequence s;
  s.grid_ref = g.fingerprint();
  for (int i = 0; i < frames; ++i) {
    s.frames.push_back(testing::random_vector(g.voxel_count(), seed + i, -0.2, 0.0));
  }
  return s;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("correlation examples") {
    const auto x = testing::random_vector(100, 1);
    CHECK(cc(x, x) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(cc(x, affine(x, 2.0, 3.0)) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(cc(x, affine(x, -1.0, 0.0)) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK_THROWS_AS(cc(x, std::vector<double>(100, 2.0)), UndefinedMetric);
    CHECK_THROWS_AS(cc(std::vector<double>(100, 2.0), x), UndefinedMetric);
  }

  TEST_CASE("correlation is invariant under positive affine maps") {
    for (int s = 0; s < 10; ++s) {
      const auto x = testing::random_vector(64, 10 + s);
      const auto y = testing::random_vector(64, 40 + s);
      const double base = cc(x, y);
      CHECK(std::abs(cc(affine(x, 0.3 + s, -1.0 * s), y) - base) < 1e-12);
      CHECK(std::abs(cc(x, affine(y, 7.0, 2.0)) - base) < 1e-12);
      CHECK(base >= -1.0);
      CHECK(base <= 1.0);
    }
  }

  TEST_CASE("PSNR examples") {
    const auto ref = testing::random_vector(50, 2);
    CHECK(psnr(ref, ref, 1.0) == kPsnrCap);
    CHECK(psnr(affine(ref, 1.0, 0.1), ref, 1.0) == doctest::Approx(20.0).epsilon(1e-10));
    const double gain = psnr(affine(ref, 1.0, 0.05), ref, 1.0) - psnr(affine(ref, 1.0, 0.1), ref, 1.0);
    CHECK(gain == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-10));
    CHECK(gain == doctest::Approx(6.02).epsilon(1e-3));
  }

  TEST_CASE("PSNR decreases as the uniform offset grows") {
    const auto ref = testing::random_vector(30, 3);
    double previous = std::numeric_limits<double>::infinity();
    for (double off : {0.001, 0.01, 0.05, 0.1, 0.5, 1.0}) {
      const double v = psnr(affine(ref, 1.0, -off), ref, 1.0);
      CHECK(v < previous);
      previous = v;
    }
  }

  TEST_CASE("error ratio examples") {
    const auto ref = testing::random_vector(40, 4);
    CHECK(err(ref, ref) == 0.0);
    CHECK(err(std::vector<double>(40, 0.0), ref) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(err(affine(ref, 2.0, 0.0), ref) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(err(ref, std::vector<double>(40, 0.0)), UndefinedMetric);

    const auto d = testing::random_vector(40, 5);
    auto shifted = [&](double t) {
      std::vector<double> y(ref);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += t * d[i];
      return y;
    };
    for (double t : {-3.0, 0.5, 2.0}) {
      CHECK(err(shifted(t), ref) == doctest::Approx(std::abs(t) * err(shifted(1.0), ref)));
    }
  }

  TEST_CASE("MSSIM examples") {
    const Volume x = testing::random_volume(16, 16, 3, 6);
    CHECK(mssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

    Volume shifted = x;
    for (auto& v : shifted.data()) v += 0.5;
    CHECK(mssim(shifted, x) < 1.0);

    const Volume a = testing::random_volume(32, 32, 8, 7);
    const Volume b = testing::random_volume(32, 32, 8, 8);
    CHECK(std::abs(mssim(a, b)) < 0.2);
    CHECK(mssim(a, b) == doctest::Approx(mssim(b, a)).epsilon(1e-13));

    CHECK_THROWS_AS(mssim(Volume(10, 16, 2), Volume(10, 16, 2)), InvalidArgument);
    CHECK_THROWS_AS(mssim(Volume(16, 16, 2), Volume(16, 16, 3)), InvalidArgument);
  }

  TEST_CASE("MSSIM stays within [-1, 1]") {
    for (int s = 0; s < 5; ++s) {
      const Volume a = testing::random_volume(12, 14, 2, 20 + s);
      Volume b = a;
      for (auto& v : b.data()) v = -v;
      const double m = mssim(a, b);
      CHECK(m >= -1.0);
      CHECK(m <= 1.0);
    }
  }

  TEST_CASE("identity sequence") {
    const GridGeometry g = build_grid(16, 16, 2, Box::unit());
    const auto truth = sequence_of(g, 4, 1);
    const auto report = evaluate_sequence(truth, truth, g);
    REQUIRE(report.per_frame.size() == 4);
    for (int i = 0; i < 4; ++i) {
      const auto& f = report.per_frame[i];
      CHECK(f.frame == i + 1);
      CHECK(f.cc == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(f.err == 0.0);
      CHECK(f.mssim == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(f.psnr == kPsnrCap);
    }
  }

  TEST_CASE("means are the column averages") {
    const GridGeometry g = build_grid(16, 16, 2, Box::unit());
    const auto truth = sequence_of(g, 5, 1);
    const auto recon = sequence_of(g, 5, 100);
    const auto report = evaluate_sequence(recon, truth, g);
    FrameMetrics sum;
    for (const auto& f : report.per_frame) {
      sum.cc += f.cc;
      sum.psnr += f.psnr;
      sum.mssim += f.mssim;
      sum.err += f.err;
    }
    CHECK(report.means.cc == doctest::Approx(sum.cc / 5).epsilon(1e-14));
    CHECK(report.means.psnr == doctest::Approx(sum.psnr / 5).epsilon(1e-14));
    CHECK(report.means.mssim == doctest::Approx(sum.mssim / 5).epsilon(1e-14));
    CHECK(report.means.err == doctest::Approx(sum.err / 5).epsilon(1e-14));

    const auto first = report.per_frame.front();
    CHECK(first.cc == doctest::Approx(cc(recon.frames[0], truth.frames[0])));
    CHECK(first.err == doctest::Approx(err(recon.frames[0], truth.frames[0])));
  }

  TEST_CASE("sequence length mismatch") {
    const GridGeometry g = build_grid(16, 16, 2, Box::unit());
    CHECK_THROWS_AS(evaluate_sequence(sequence_of(g, 3, 1), sequence_of(g, 4, 1), g),
                    InvalidArgument);
  }

  TEST_CASE("CSV round trip keeps full precision") {
    const GridGeometry g = build_grid(16, 16, 2, Box::unit());
    const auto report = evaluate_sequence(sequence_of(g, 3, 50), sequence_of(g, 3, 9), g);
    std::stringstream ss;
    write_metrics_csv(ss, report);
    const std::string text = ss.str();
    CHECK(text.rfind("frame,cc,psnr,mssim,err\n", 0) == 0);
    std::size_t lines = 0;
    for (char c : text) lines += c == '\n' ? 1 : 0;
    CHECK(lines == 1 + 3 + 1);
    CHECK(text.find("\nmean,") != std::string::npos);
    CHECK(read_metrics_csv(ss) == report);

    std::istringstream bad("frame,cc\n1,0.5\n");
    CHECK_THROWS_AS(read_metrics_csv(bad), FormatError);
  }
}
