#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "d2ip/forward.hpp"
#include "d2ip/geometry.hpp"

namespace d2ip {

struct Ellipsoid {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 semi_axes{1.0, 1.0, 1.0};

  bool contains(const Vec3& point) const noexcept;
};

enum class PhantomCase { healthy_cycle, edema_cycle };

std::string to_string(PhantomCase c);

/// Two-lung thoracic phantom with ellipsoidal lungs.
///
/// Lungs scale about their centers from the end-exhale to the end-inhale
/// shape following breathing_phase(); lung conductivity follows the same
/// phase linearly from lung_start_s to lung_end_s.
struct LungPhantomSpec {
  PhantomCase kind = PhantomCase::healthy_cycle;
  int frames = 20;
  double background_s = 0.24;
  double lung_start_s = 0.20;
  double lung_end_s = 0.105;
  std::optional<double> edema_s;
  Ellipsoid right_exhale, right_inhale;
  Ellipsoid left_exhale, left_inhale;
  /// Fixed region inside the left lung, used when edema_s is set.
  std::optional<Ellipsoid> edema_region;

  /// Healthy breathing: background 0.24 S/m, lungs 0.20 -> 0.105 S/m.
  static LungPhantomSpec healthy(const GridGeometry& grid, int frames);
  /// Unilateral edema: lungs 0.14 -> 0.0835 S/m, dorsal part of the left
  /// lung held at 0.24 S/m.
  static LungPhantomSpec edema(const GridGeometry& grid, int frames);
};

/// Monotone half-cosine inhalation phase s(i) = (1 - cos(pi (i-1)/(T-1))) / 2
/// for 1-based frame i.
double breathing_phase(int frame, int frames);

double lung_conductivity(const LungPhantomSpec& spec, int frame);

struct LungMasks {
  std::vector<char> left;
  std::vector<char> right;
  std::vector<char> edema;
};

/// Voxel masks of both lungs and the edema region at 1-based frame i.
LungMasks lung_masks(const GridGeometry& grid, const LungPhantomSpec& spec, int frame);

/// Absolute conductivity of frame i in S/m.
std::vector<double> absolute_conductivity(const GridGeometry& grid, const LungPhantomSpec& spec,
                                          int frame);

/// Q x T conductivity-change sequence stored frame-major.
struct ConductivitySequence {
  std::vector<std::vector<double>> frames;
  std::string grid_ref;
  bool is_ground_truth = false;
  ReferenceMode reference_mode = ReferenceMode::empty_background;
  /// "case1", "case2" for phantoms; the method name for reconstructions.
  std::string source;
  std::map<std::string, double> conductivities;

  std::size_t frame_count() const noexcept { return frames.size(); }
  std::size_t voxels() const noexcept { return frames.empty() ? 0 : frames.front().size(); }
};

/// Throws InvalidArgument when the spec's lungs leave the grid at full
/// inhalation or the edema region is missing for an edema spec.
void validate(const LungPhantomSpec& spec, const GridGeometry& grid);

/// Healthy breathing, T frames of sigma_i - background.
ConductivitySequence make_case1(const GridGeometry& grid, int frames);
ConductivitySequence make_case1(const GridGeometry& grid, const LungPhantomSpec& spec);

/// Edema breathing, T - 1 frames of sigma_{i+1} - sigma_1.
ConductivitySequence make_case2(const GridGeometry& grid, int frames);
ConductivitySequence make_case2(const GridGeometry& grid, const LungPhantomSpec& spec);

/// Delta v_i = J * Delta sigma_i followed by add_noise with seed + i.
VoltageSequence synthesize_measurements(const ConductivitySequence& seq,
                                        const SensitivityMatrix& J, double snr_db,
                                        std::uint64_t seed);

}  // namespace d2ip
