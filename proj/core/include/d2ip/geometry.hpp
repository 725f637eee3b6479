#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace d2ip {

using Vec3 = std::array<double, 3>;

/// Axis-aligned physical bounding box in meters.
struct Box {
  Vec3 min{0.0, 0.0, 0.0};
  Vec3 max{1.0, 1.0, 1.0};

  double span(int axis) const { return max[axis] - min[axis]; }
  Vec3 center() const {
    return {0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), 0.5 * (min[2] + max[2])};
  }

  static Box unit() { return Box{}; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Regular voxel grid of rows x cols x planes.
///
/// Rows run along y, columns along x and planes along z. A voxel (r, c, p)
/// is vectorized to the linear index q = ((p * rows) + r) * cols + c:
/// plane index slowest, column index fastest. Every file written by this
/// library uses that ordering.
class GridGeometry {
 public:
  GridGeometry(int rows, int cols, int planes, const Box& extent);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int planes() const noexcept { return planes_; }
  std::size_t voxel_count() const noexcept {
    return static_cast<std::size_t>(rows_) * cols_ * planes_;
  }
  const Box& extent() const noexcept { return extent_; }

  /// Voxel pitch along x (cols), y (rows) and z (planes).
  Vec3 pitch() const noexcept;
  double voxel_volume() const noexcept;
  double min_pitch() const noexcept;

  std::size_t index(int r, int c, int p) const noexcept {
    return (static_cast<std::size_t>(p) * rows_ + r) * cols_ + c;
  }
  Vec3 voxel_center(int r, int c, int p) const noexcept;
  Vec3 voxel_center(std::size_t q) const noexcept;

  /// Stable identifier derived from dimensions and extent.
  std::string fingerprint() const;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;

 private:
  int rows_;
  int cols_;
  int planes_;
  Box extent_;
};

/// Validating factory; throws InvalidArgument on non-positive dimensions or
/// empty extent.
GridGeometry build_grid(int rows, int cols, int planes, const Box& extent);

/// Dense 3D array over a grid, stored in canonical vectorized order.
class Volume {
 public:
  Volume() = default;
  Volume(int rows, int cols, int planes, double fill = 0.0);
  explicit Volume(const GridGeometry& grid, double fill = 0.0)
      : Volume(grid.rows(), grid.cols(), grid.planes(), fill) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int planes() const noexcept { return planes_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(int r, int c, int p) { return data_[offset(r, c, p)]; }
  double operator()(int r, int c, int p) const { return data_[offset(r, c, p)]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Volume& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_ && planes_ == other.planes_;
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  std::size_t offset(int r, int c, int p) const noexcept {
    return (static_cast<std::size_t>(p) * rows_ + r) * cols_ + c;
  }

  int rows_ = 0;
  int cols_ = 0;
  int planes_ = 0;
  std::vector<double> data_;
};

/// Flattens a volume to a length-Q vector; element q = ((p*R)+r)*C + c holds
/// volume(r, c, p). Throws InvalidArgument when the shape differs from the grid.
std::vector<double> vectorize(const Volume& volume, const GridGeometry& grid);

/// Exact inverse of vectorize.
Volume devectorize(std::span<const double> values, const GridGeometry& grid);

struct ElectrodeArray {
  std::vector<Vec3> positions;
  std::vector<int> layer;
  int per_layer = 0;
  int layers = 0;

  std::size_t size() const noexcept { return positions.size(); }
};

/// Places `per_layer` electrodes per layer at equal angular spacing on the
/// ellipse inscribed in the grid's (x, y) extent. Angle 0 is the +x axis and
/// indices increase counterclockwise; electrode index = layer * per_layer + k.
ElectrodeArray place_electrodes(const GridGeometry& grid, int per_layer, int layers,
                                std::span<const double> layer_heights);

/// The 32-electrode, two-layer belt at 1/3 and 2/3 of the vertical extent.
ElectrodeArray default_electrodes(const GridGeometry& grid);

struct Quadruple {
  int drive_source;
  int drive_sink;
  int measure_plus;
  int measure_minus;

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
};

enum class ProtocolScheme { adjacent_in_layer, cross_layer };

std::string to_string(ProtocolScheme scheme);
ProtocolScheme protocol_scheme_from_string(const std::string& name);

struct MeasurementProtocol {
  ProtocolScheme scheme = ProtocolScheme::adjacent_in_layer;
  std::vector<Quadruple> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  std::string fingerprint() const;
};

/// Adjacent drive, adjacent measure, skipping measurement pairs that touch a
/// drive electrode.
///
/// adjacent_in_layer drives and measures within each ring: per ring of n
/// electrodes that is n * (n - 3) quadruples. cross_layer keeps the in-ring
/// drives but measures on every ring, in electrode-index order.
MeasurementProtocol generate_protocol(const ElectrodeArray& array, ProtocolScheme scheme);

/// FNV-1a over raw bytes; used for fingerprints and checksums.
std::uint64_t fnv1a(std::span<const std::byte> bytes,
                    std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t value);

}  // namespace d2ip
