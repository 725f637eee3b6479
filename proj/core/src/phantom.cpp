#include "d2ip/phantom.hpp"

#include <cmath>
#include <numbers>

#include "d2ip/error.hpp"

namespace d2ip {

namespace {

Ellipsoid scaled(const Ellipsoid& e, double factor) {
  return {e.center, {e.semi_axes[0] * factor, e.semi_axes[1] * factor, e.semi_axes[2] * factor}};
}

Ellipsoid interpolate(const Ellipsoid& a, const Ellipsoid& b, double s) {
  Ellipsoid out;
  for (int k = 0; k < 3; ++k) {
    out.center[k] = a.center[k] + s * (b.center[k] - a.center[k]);
    out.semi_axes[k] = a.semi_axes[k] + s * (b.semi_axes[k] - a.semi_axes[k]);
  }
  return out;
}

bool inside_box(const Ellipsoid& e, const Box& box) {
  for (int k = 0; k < 3; ++k) {
    if (e.center[k] - e.semi_axes[k] < box.min[k] || e.center[k] + e.semi_axes[k] > box.max[k]) {
      return false;
    }
  }
  return true;
}

LungPhantomSpec base_spec(const GridGeometry& grid, int frames) {
  const Box& box = grid.extent();
  const Vec3 c = box.center();
  const double sx = box.span(0), sy = box.span(1), sz = box.span(2);
  constexpr double kInhaleScale = 1.3;

  LungPhantomSpec spec;
  spec.frames = frames;
  spec.right_exhale = {{c[0] - 0.22 * sx, c[1], c[2]}, {0.14 * sx, 0.25 * sy, 0.30 * sz}};
  spec.left_exhale = {{c[0] + 0.22 * sx, c[1], c[2]}, {0.14 * sx, 0.25 * sy, 0.30 * sz}};
  spec.right_inhale = scaled(spec.right_exhale, kInhaleScale);
  spec.left_inhale = scaled(spec.left_exhale, kInhaleScale);
  return spec;
}

}  // namespace

bool Ellipsoid::contains(const Vec3& point) const noexcept {
  double acc = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double t = (point[k] - center[k]) / semi_axes[k];
    acc += t * t;
  }
  return acc <= 1.0;
}

std::string to_string(PhantomCase c) {
  return c == PhantomCase::healthy_cycle ? "healthy_cycle" : "edema_cycle";
}

LungPhantomSpec LungPhantomSpec::healthy(const GridGeometry& grid, int frames) {
  LungPhantomSpec spec = base_spec(grid, frames);
  spec.kind = PhantomCase::healthy_cycle;
  return spec;
}

LungPhantomSpec LungPhantomSpec::edema(const GridGeometry& grid, int frames) {
  LungPhantomSpec spec = base_spec(grid, frames);
  spec.kind = PhantomCase::edema_cycle;
  spec.lung_start_s = 0.14;
  spec.lung_end_s = 0.0835;
  spec.edema_s = 0.24;
  const Box& box = grid.extent();
  const Ellipsoid& left = spec.left_exhale;
  // Dorsal (-y) half of the left lung over its full height.
  spec.edema_region = Ellipsoid{{left.center[0], left.center[1] - 0.20 * box.span(1), left.center[2]},
                                {0.25 * box.span(0), 0.30 * box.span(1), 0.50 * box.span(2)}};
  return spec;
}

double breathing_phase(int frame, int frames) {
  if (frames < 2) throw InvalidArgument("a breathing sequence needs at least two frames");
  if (frame < 1 || frame > frames) throw InvalidArgument("frame index out of range");
  return 0.5 * (1.0 - std::cos(std::numbers::pi * (frame - 1) / (frames - 1)));
}

double lung_conductivity(const LungPhantomSpec& spec, int frame) {
  const double s = breathing_phase(frame, spec.frames);
  return spec.lung_start_s + s * (spec.lung_end_s - spec.lung_start_s);
}

void validate(const LungPhantomSpec& spec, const GridGeometry& grid) {
  if (spec.frames < 2) throw InvalidArgument("phantom needs T >= 2 frames");
  if (!(spec.background_s > 0.0 && spec.lung_start_s > 0.0 && spec.lung_end_s > 0.0)) {
    throw InvalidArgument("phantom conductivities must be strictly positive");
  }
  if (spec.edema_s && !(*spec.edema_s > 0.0)) {
    throw InvalidArgument("edema conductivity must be strictly positive");
  }
  if (spec.kind == PhantomCase::edema_cycle && (!spec.edema_s || !spec.edema_region)) {
    throw InvalidArgument("edema phantom needs an edema region and conductivity");
  }
  const Box& box = grid.extent();
  for (const Ellipsoid* e : {&spec.right_exhale, &spec.right_inhale, &spec.left_exhale,
                             &spec.left_inhale}) {
    if (!inside_box(*e, box)) {
      throw InvalidArgument("lung ellipsoid exceeds the grid extent");
    }
  }
}

LungMasks lung_masks(const GridGeometry& grid, const LungPhantomSpec& spec, int frame) {
  const double s = breathing_phase(frame, spec.frames);
  const Ellipsoid right = interpolate(spec.right_exhale, spec.right_inhale, s);
  const Ellipsoid left = interpolate(spec.left_exhale, spec.left_inhale, s);

  const std::size_t q_count = grid.voxel_count();
  LungMasks masks{std::vector<char>(q_count, 0), std::vector<char>(q_count, 0),
                  std::vector<char>(q_count, 0)};
  for (std::size_t q = 0; q < q_count; ++q) {
    const Vec3 x = grid.voxel_center(q);
    masks.left[q] = left.contains(x);
    // Left wins on overlap so the two masks stay disjoint.
    masks.right[q] = !masks.left[q] && right.contains(x);
    if (spec.edema_region && masks.left[q] && spec.edema_region->contains(x)) {
      masks.edema[q] = 1;
    }
  }
  return masks;
}

std::vector<double> absolute_conductivity(const GridGeometry& grid, const LungPhantomSpec& spec,
                                          int frame) {
  const LungMasks masks = lung_masks(grid, spec, frame);
  const double lung = lung_conductivity(spec, frame);
  std::vector<double> sigma(grid.voxel_count(), spec.background_s);
  for (std::size_t q = 0; q < sigma.size(); ++q) {
    if (masks.edema[q] && spec.edema_s) {
      sigma[q] = *spec.edema_s;
    } else if (masks.left[q] || masks.right[q]) {
      sigma[q] = lung;
    }
  }
  return sigma;
}

namespace {

std::map<std::string, double> conductivity_table(const LungPhantomSpec& spec) {
  std::map<std::string, double> table{{"background_s", spec.background_s},
                                      {"lung_start_s", spec.lung_start_s},
                                      {"lung_end_s", spec.lung_end_s}};
  if (spec.edema_s) table["edema_s"] = *spec.edema_s;
  return table;
}

}  // namespace

ConductivitySequence make_case1(const GridGeometry& grid, int frames) {
  return make_case1(grid, LungPhantomSpec::healthy(grid, frames));
}

ConductivitySequence make_case1(const GridGeometry& grid, const LungPhantomSpec& spec) {
  validate(spec, grid);
  ConductivitySequence seq;
  seq.grid_ref = grid.fingerprint();
  seq.is_ground_truth = true;
  seq.reference_mode = ReferenceMode::empty_background;
  seq.source = "case1";
  seq.conductivities = conductivity_table(spec);
  for (int i = 1; i <= spec.frames; ++i) {
    auto sigma = absolute_conductivity(grid, spec, i);
    for (double& v : sigma) v -= spec.background_s;
    seq.frames.push_back(std::move(sigma));
  }
  return seq;
}

ConductivitySequence make_case2(const GridGeometry& grid, int frames) {
  return make_case2(grid, LungPhantomSpec::edema(grid, frames));
}

ConductivitySequence make_case2(const GridGeometry& grid, const LungPhantomSpec& spec) {
  validate(spec, grid);
  ConductivitySequence seq;
  seq.grid_ref = grid.fingerprint();
  seq.is_ground_truth = true;
  seq.reference_mode = ReferenceMode::first_frame;
  seq.source = "case2";
  seq.conductivities = conductivity_table(spec);
  const auto reference = absolute_conductivity(grid, spec, 1);
  for (int i = 2; i <= spec.frames; ++i) {
    auto sigma = absolute_conductivity(grid, spec, i);
    for (std::size_t q = 0; q < sigma.size(); ++q) sigma[q] -= reference[q];
    seq.frames.push_back(std::move(sigma));
  }
  return seq;
}

VoltageSequence synthesize_measurements(const ConductivitySequence& seq,
                                        const SensitivityMatrix& J, double snr_db,
                                        std::uint64_t seed) {
  if (seq.voxels() != J.voxels()) {
    throw InvalidArgument("conductivity sequence and sensitivity matrix disagree on Q");
  }
  if (!seq.grid_ref.empty() && !J.grid_ref.empty() && seq.grid_ref != J.grid_ref) {
    throw InvalidArgument("conductivity sequence and sensitivity matrix use different grids");
  }
  VoltageSequence out;
  out.reference_mode = seq.reference_mode;
  out.snr_db = snr_db;
  out.seed = seed;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    VoltageFrame frame;
    frame.frame_index = static_cast<int>(i) + 1;
    frame.values = forward_project(J, seq.frames[i]);
    out.frames.push_back(add_noise(frame, snr_db, seed + i + 1));
  }
  return out;
}

}  // namespace d2ip
