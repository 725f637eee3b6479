#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "d2ip/geometry.hpp"
#include "d2ip/phantom.hpp"

namespace d2ip {

inline constexpr double kPsnrCap = 100.0;

/// Pearson correlation. Throws UndefinedMetric when either input is constant.
double cc(std::span<const double> x, std::span<const double> y);

/// 10 log10(peak^2 / MSE), capped at kPsnrCap when MSE < peak^2 * 1e-10.
double psnr(std::span<const double> x, std::span<const double> ref, double peak);

/// Single-scale SSIM averaged over axial slices (fixed plane), with an
/// 11x11 Gaussian window (sigma 1.5) over valid positions, K1 = 0.01,
/// K2 = 0.03 and the dynamic range taken from the joint min/max of both
/// volumes. Throws InvalidArgument for slices smaller than the window.
double mssim(const Volume& x, const Volume& ref);

/// ||x - ref|| / ||ref||. Throws UndefinedMetric for a zero reference.
double err(std::span<const double> x, std::span<const double> ref);

struct FrameMetrics {
  int frame = 0;
  double cc = 0.0;
  double psnr = 0.0;
  double mssim = 0.0;
  double err = 0.0;

  friend bool operator==(const FrameMetrics&, const FrameMetrics&) = default;
};

struct MetricsReport {
  std::vector<FrameMetrics> per_frame;
  FrameMetrics means;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Per-frame metrics and their arithmetic means. The PSNR peak defaults to
/// each truth frame's dynamic range.
MetricsReport evaluate_sequence(const ConductivitySequence& recon,
                                const ConductivitySequence& truth, const GridGeometry& grid,
                                std::optional<double> peak = std::nullopt);

/// CSV with header "frame,cc,psnr,mssim,err", one row per frame and a final
/// "mean" row; values printed with 17 significant digits.
void write_metrics_csv(std::ostream& out, const MetricsReport& report);
MetricsReport read_metrics_csv(std::istream& in);

}  // namespace d2ip
