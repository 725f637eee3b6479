#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "d2ip/geometry.hpp"

namespace d2ip {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense M x Q linearized measurement operator.
struct SensitivityMatrix {
  RowMatrix values;
  bool normalized = false;
  bool projected = false;
  std::string grid_ref;
  std::string protocol_ref;

  std::size_t measurements() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t voxels() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

/// Sensitivity of one quadruple at every voxel center, in canonical voxel
/// order: S(r) = -grad(u_drive)(r) . grad(u_measure)(r) * voxel_volume, where
/// u for a source/sink pair is the free-space point-source potential.
/// Distances below half the smallest voxel pitch are clamped to it.
std::vector<double> sensitivity_row(const GridGeometry& grid, const ElectrodeArray& array,
                                    const Quadruple& quad);

/// Unnormalized lead-field operator for every quadruple of the protocol.
SensitivityMatrix assemble_sensitivity(const GridGeometry& grid, const ElectrodeArray& array,
                                       const MeasurementProtocol& protocol);

/// Divides every row by its Euclidean norm. Throws DegenerateOperator on a
/// zero row.
SensitivityMatrix normalize_sensitivity(const SensitivityMatrix& J);

/// J * dsigma.
std::vector<double> forward_project(const SensitivityMatrix& J, std::span<const double> dsigma);

/// J^T * y.
std::vector<double> adjoint_project(const SensitivityMatrix& J, std::span<const double> y);

enum class ReferenceMode { empty_background, first_frame };

std::string to_string(ReferenceMode mode);
ReferenceMode reference_mode_from_string(const std::string& name);

inline constexpr double kNoiseFree = std::numeric_limits<double>::infinity();

struct VoltageFrame {
  std::vector<double> values;
  int frame_index = 1;
  std::optional<double> snr_db;
};

struct VoltageSequence {
  std::vector<VoltageFrame> frames;
  ReferenceMode reference_mode = ReferenceMode::empty_background;
  double snr_db = kNoiseFree;
  std::uint64_t seed = 0;

  std::size_t frame_count() const noexcept { return frames.size(); }
  std::size_t measurements() const noexcept {
    return frames.empty() ? 0 : frames.front().values.size();
  }
};

/// Throws InvalidArgument unless all frames share M and indices run 1..T.
void validate(const VoltageSequence& seq);

/// Adds zero-mean Gaussian noise with variance mean(v^2) / 10^(snr/10).
/// snr_db = kNoiseFree returns the input unchanged.
VoltageFrame add_noise(const VoltageFrame& v, double snr_db, std::uint64_t seed);

}  // namespace d2ip
