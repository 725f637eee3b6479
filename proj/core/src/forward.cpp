#include "d2ip/forward.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "d2ip/error.hpp"

namespace d2ip {

namespace {

// Gradient of 1/(4 pi |r - a|) - 1/(4 pi |r - b|) with |.| clamped from below.
Vec3 dipole_gradient(const Vec3& r, const Vec3& a, const Vec3& b, double min_dist) {
  Vec3 g{0.0, 0.0, 0.0};
  auto accumulate = [&](const Vec3& e, double sign) {
    const Vec3 d{r[0] - e[0], r[1] - e[1], r[2] - e[2]};
    const double dist = std::max(std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]), min_dist);
    const double k = -sign / (4.0 * std::numbers::pi * dist * dist * dist);
    for (int i = 0; i < 3; ++i) g[i] += k * d[i];
  };
  accumulate(a, +1.0);
  accumulate(b, -1.0);
  return g;
}

void check_quad(const ElectrodeArray& array, const Quadruple& quad) {
  const int n = static_cast<int>(array.size());
  for (int e : {quad.drive_source, quad.drive_sink, quad.measure_plus, quad.measure_minus}) {
    if (e < 0 || e >= n) throw InvalidArgument("quadruple references a missing electrode");
  }
}

}  // namespace

std::vector<double> sensitivity_row(const GridGeometry& grid, const ElectrodeArray& array,
                                    const Quadruple& quad) {
  check_quad(array, quad);
  const double min_dist = 0.5 * grid.min_pitch();
  const double dv = grid.voxel_volume();
  const Vec3& ds = array.positions[quad.drive_source];
  const Vec3& dk = array.positions[quad.drive_sink];
  const Vec3& mp = array.positions[quad.measure_plus];
  const Vec3& mm = array.positions[quad.measure_minus];

  std::vector<double> row(grid.voxel_count());
  for (std::size_t q = 0; q < row.size(); ++q) {
    const Vec3 r = grid.voxel_center(q);
    const Vec3 gd = dipole_gradient(r, ds, dk, min_dist);
    const Vec3 gm = dipole_gradient(r, mp, mm, min_dist);
    row[q] = -(gd[0] * gm[0] + gd[1] * gm[1] + gd[2] * gm[2]) * dv;
  }
  return row;
}

SensitivityMatrix assemble_sensitivity(const GridGeometry& grid, const ElectrodeArray& array,
                                       const MeasurementProtocol& protocol) {
  if (protocol.size() == 0) throw InvalidArgument("empty measurement protocol");
  SensitivityMatrix J;
  J.values.resize(static_cast<Eigen::Index>(protocol.size()),
                  static_cast<Eigen::Index>(grid.voxel_count()));
  for (std::size_t m = 0; m < protocol.size(); ++m) {
    const auto row = sensitivity_row(grid, array, protocol.pairs[m]);
    std::copy(row.begin(), row.end(), J.values.row(static_cast<Eigen::Index>(m)).data());
  }
  J.grid_ref = grid.fingerprint();
  J.protocol_ref = protocol.fingerprint();
  return J;
}

SensitivityMatrix normalize_sensitivity(const SensitivityMatrix& J) {
  SensitivityMatrix out = J;
  for (Eigen::Index m = 0; m < out.values.rows(); ++m) {
    const double norm = out.values.row(m).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw DegenerateOperator("sensitivity row " + std::to_string(m) + " has zero norm",
                               static_cast<std::size_t>(m));
    }
    out.values.row(m) /= norm;
  }
  out.normalized = true;
  // No projection formula is applied beyond row normalization; the flag
  // records that the operator went through this stage.
  out.projected = true;
  return out;
}

std::vector<double> forward_project(const SensitivityMatrix& J, std::span<const double> dsigma) {
  if (dsigma.size() != J.voxels()) {
    throw InvalidArgument("forward_project: expected " + std::to_string(J.voxels()) +
                          " voxels, got " + std::to_string(dsigma.size()));
  }
  std::vector<double> out(J.measurements());
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())).noalias() =
      J.values * Eigen::Map<const Eigen::VectorXd>(dsigma.data(),
                                                   static_cast<Eigen::Index>(dsigma.size()));
  return out;
}

std::vector<double> adjoint_project(const SensitivityMatrix& J, std::span<const double> y) {
  if (y.size() != J.measurements()) {
    throw InvalidArgument("adjoint_project: expected " + std::to_string(J.measurements()) +
                          " measurements, got " + std::to_string(y.size()));
  }
  std::vector<double> out(J.voxels());
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())).noalias() =
      J.values.transpose() *
      Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return out;
}

std::string to_string(ReferenceMode mode) {
  return mode == ReferenceMode::empty_background ? "empty_background" : "first_frame";
}

ReferenceMode reference_mode_from_string(const std::string& name) {
  if (name == "empty_background") return ReferenceMode::empty_background;
  if (name == "first_frame") return ReferenceMode::first_frame;
  throw InvalidArgument("unknown reference mode '" + name + "'");
}

void validate(const VoltageSequence& seq) {
  const std::size_t m = seq.measurements();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& f = seq.frames[i];
    if (f.values.size() != m) throw InvalidArgument("voltage frames disagree on M");
    if (f.frame_index != static_cast<int>(i) + 1) {
      throw InvalidArgument("voltage frame indices must run 1..T");
    }
    for (double v : f.values) {
      if (!std::isfinite(v)) throw InvalidArgument("non-finite voltage value");
    }
  }
}

VoltageFrame add_noise(const VoltageFrame& v, double snr_db, std::uint64_t seed) {
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
    throw InvalidArgument("SNR must be finite or the noise-free sentinel");
  }
  VoltageFrame out = v;
  if (snr_db == kNoiseFree) return out;
  if (v.values.empty()) throw InvalidArgument("cannot add noise to an empty frame");

  double power = 0.0;
  for (double x : v.values) power += x * x;
  power /= static_cast<double>(v.values.size());
  if (!(power > 0.0)) throw InvalidArgument("SNR is undefined for an all-zero signal");

  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& x : out.values) x += noise(rng);
  out.snr_db = snr_db;
  return out;
}

}  // namespace d2ip
