#include "d2ip/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "d2ip/error.hpp"

namespace d2ip {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(what) + ": length mismatch");
  if (a.empty()) throw InvalidArgument(std::string(what) + ": empty input");
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double cc(std::span<const double> x, std::span<const double> y) {
  require_same_size(x, y, "cc");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetric("cc: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double psnr(std::span<const double> x, std::span<const double> ref, double peak) {
  require_same_size(x, ref, "psnr");
  if (!(peak > 0.0)) throw InvalidArgument("psnr: peak must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - ref[i]) * (x[i] - ref[i]);
  const double mse = se / static_cast<double>(x.size());
  if (mse < peak * peak * 1e-10) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

double mssim(const Volume& x, const Volume& ref) {
  if (!x.same_shape(ref)) throw InvalidArgument("mssim: shape mismatch");
  if (x.rows() < kWindow || x.cols() < kWindow) {
    throw InvalidArgument("mssim: slices must be at least 11x11");
  }
  const auto [xmin, xmax] = std::ranges::minmax(x.data());
  const auto [rmin, rmax] = std::ranges::minmax(ref.data());
  const double range = std::max(xmax, rmax) - std::min(xmin, rmin);
  if (range == 0.0) return 1.0;  // both volumes hold the same constant
  const double c1 = (kK1 * range) * (kK1 * range);
  const double c2 = (kK2 * range) * (kK2 * range);
  const auto w = gaussian_taps();

  double total = 0.0;
  std::size_t count = 0;
  for (int p = 0; p < x.planes(); ++p) {
    for (int r0 = 0; r0 + kWindow <= x.rows(); ++r0) {
      for (int c0 = 0; c0 + kWindow <= x.cols(); ++c0) {
        double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int i = 0; i < kWindow; ++i) {
          for (int j = 0; j < kWindow; ++j) {
            const double wt = w[i] * w[j];
            const double a = x(r0 + i, c0 + j, p);
            const double b = ref(r0 + i, c0 + j, p);
            mx += wt * a;
            my += wt * b;
            sxx += wt * a * a;
            syy += wt * b * b;
            sxy += wt * a * b;
          }
        }
        const double vx = sxx - mx * mx;
        const double vy = syy - my * my;
        const double cov = sxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double err(std::span<const double> x, std::span<const double> ref) {
  require_same_size(x, ref, "err");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - ref[i]) * (x[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (den == 0.0) throw UndefinedMetric("err: zero reference");
  return std::sqrt(num) / std::sqrt(den);
}

MetricsReport evaluate_sequence(const ConductivitySequence& recon,
                                const ConductivitySequence& truth, const GridGeometry& grid,
                                std::optional<double> peak) {
  if (recon.frame_count() != truth.frame_count()) {
    throw InvalidArgument("evaluate: reconstruction has " + std::to_string(recon.frame_count()) +
                          " frames, truth has " + std::to_string(truth.frame_count()));
  }
  if (recon.frame_count() == 0) throw InvalidArgument("evaluate: empty sequence");

  MetricsReport report;
  for (std::size_t i = 0; i < truth.frame_count(); ++i) {
    const auto& x = recon.frames[i];
    const auto& ref = truth.frames[i];
    if (x.size() != grid.voxel_count() || ref.size() != grid.voxel_count()) {
      throw InvalidArgument("evaluate: frame " + std::to_string(i + 1) +
                            " does not match the grid");
    }
    double frame_peak = 0.0;
    if (peak) {
      frame_peak = *peak;
    } else {
      const auto [lo, hi] = std::ranges::minmax(ref);
      frame_peak = hi - lo;
      if (frame_peak == 0.0) throw UndefinedMetric("psnr: truth frame has zero dynamic range");
    }
    FrameMetrics m;
    m.frame = static_cast<int>(i + 1);
    m.cc = cc(x, ref);
    m.psnr = psnr(x, ref, frame_peak);
    m.mssim = mssim(devectorize(x, grid), devectorize(ref, grid));
    m.err = err(x, ref);
    report.per_frame.push_back(m);
  }
  const double n = static_cast<double>(report.per_frame.size());
  for (const auto& m : report.per_frame) {
    report.means.cc += m.cc / n;
    report.means.psnr += m.psnr / n;
    report.means.mssim += m.mssim / n;
    report.means.err += m.err / n;
  }
  return report;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << "frame,cc,psnr,mssim,err\n";
  auto row = [&](const std::string& label, const FrameMetrics& m) {
    out << label << ',' << format_double(m.cc) << ',' << format_double(m.psnr) << ','
        << format_double(m.mssim) << ',' << format_double(m.err) << '\n';
  };
  for (const auto& m : report.per_frame) row(std::to_string(m.frame), m);
  row("mean", report.means);
}

MetricsReport read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "frame,cc,psnr,mssim,err") {
    throw FormatError("metrics csv: unexpected header");
  }
  MetricsReport report;
  bool have_means = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (have_means) throw FormatError("metrics csv: rows after the mean row");
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError("metrics csv: expected 5 columns in '" + line + "'");
    FrameMetrics m;
    try {
      m.cc = std::stod(cells[1]);
      m.psnr = std::stod(cells[2]);
      m.mssim = std::stod(cells[3]);
      m.err = std::stod(cells[4]);
      if (cells[0] == "mean") {
        report.means = m;
        have_means = true;
      } else {
        m.frame = std::stoi(cells[0]);
        report.per_frame.push_back(m);
      }
    } catch (const std::logic_error&) {
      throw FormatError("metrics csv: bad number in '" + line + "'");
    }
  }
  if (!have_means) throw FormatError("metrics csv: missing mean row");
  return report;
}

}  // namespace d2ip
