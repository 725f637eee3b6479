#include "d2ip/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "d2ip/error.hpp"

namespace d2ip {

namespace {

void check_extent(const Box& extent) {
  for (int axis = 0; axis < 3; ++axis) {
    if (!(extent.span(axis) > 0.0) || !std::isfinite(extent.span(axis))) {
      throw InvalidArgument("grid extent must have strictly positive spans");
    }
  }
}

template <typename T>
std::span<const std::byte> as_bytes_of(const T& value) {
  return std::as_bytes(std::span<const T, 1>(&value, 1));
}

}  // namespace

GridGeometry::GridGeometry(int rows, int cols, int planes, const Box& extent)
    : rows_(rows), cols_(cols), planes_(planes), extent_(extent) {
  if (rows <= 0 || cols <= 0 || planes <= 0) {
    throw InvalidArgument("grid dimensions must be positive, got " + std::to_string(rows) +
                          "x" + std::to_string(cols) + "x" + std::to_string(planes));
  }
  check_extent(extent);
}

Vec3 GridGeometry::pitch() const noexcept {
  return {extent_.span(0) / cols_, extent_.span(1) / rows_, extent_.span(2) / planes_};
}

double GridGeometry::voxel_volume() const noexcept {
  const Vec3 h = pitch();
  return h[0] * h[1] * h[2];
}

double GridGeometry::min_pitch() const noexcept {
  const Vec3 h = pitch();
  return std::min({h[0], h[1], h[2]});
}

Vec3 GridGeometry::voxel_center(int r, int c, int p) const noexcept {
  const Vec3 h = pitch();
  return {extent_.min[0] + (c + 0.5) * h[0], extent_.min[1] + (r + 0.5) * h[1],
          extent_.min[2] + (p + 0.5) * h[2]};
}

Vec3 GridGeometry::voxel_center(std::size_t q) const noexcept {
  const auto c = static_cast<int>(q % cols_);
  const auto rest = q / cols_;
  const auto r = static_cast<int>(rest % rows_);
  const auto p = static_cast<int>(rest / rows_);
  return voxel_center(r, c, p);
}

std::string GridGeometry::fingerprint() const {
  std::uint64_t h = fnv1a(as_bytes_of(rows_));
  h = fnv1a(as_bytes_of(cols_), h);
  h = fnv1a(as_bytes_of(planes_), h);
  h = fnv1a(std::as_bytes(std::span<const double>(extent_.min)), h);
  h = fnv1a(std::as_bytes(std::span<const double>(extent_.max)), h);
  return "grid-" + std::to_string(rows_) + "x" + std::to_string(cols_) + "x" +
         std::to_string(planes_) + "-" + hex64(h);
}

GridGeometry build_grid(int rows, int cols, int planes, const Box& extent) {
  return GridGeometry(rows, cols, planes, extent);
}

Volume::Volume(int rows, int cols, int planes, double fill)
    : rows_(rows), cols_(cols), planes_(planes) {
  if (rows <= 0 || cols <= 0 || planes <= 0) {
    throw InvalidArgument("volume dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(rows) * cols * planes, fill);
}

std::vector<double> vectorize(const Volume& volume, const GridGeometry& grid) {
  if (volume.rows() != grid.rows() || volume.cols() != grid.cols() ||
      volume.planes() != grid.planes()) {
    throw InvalidArgument("volume shape does not match grid");
  }
  std::vector<double> out(grid.voxel_count());
  for (int p = 0; p < grid.planes(); ++p) {
    for (int r = 0; r < grid.rows(); ++r) {
      for (int c = 0; c < grid.cols(); ++c) {
        out[grid.index(r, c, p)] = volume(r, c, p);
      }
    }
  }
  return out;
}

Volume devectorize(std::span<const double> values, const GridGeometry& grid) {
  if (values.size() != grid.voxel_count()) {
    throw InvalidArgument("vector length " + std::to_string(values.size()) +
                          " does not match voxel count " +
                          std::to_string(grid.voxel_count()));
  }
  Volume out(grid);
  for (int p = 0; p < grid.planes(); ++p) {
    for (int r = 0; r < grid.rows(); ++r) {
      for (int c = 0; c < grid.cols(); ++c) {
        out(r, c, p) = values[grid.index(r, c, p)];
      }
    }
  }
  return out;
}

ElectrodeArray place_electrodes(const GridGeometry& grid, int per_layer, int layers,
                                std::span<const double> layer_heights) {
  if (per_layer < 4) throw InvalidArgument("need at least 4 electrodes per layer");
  if (layers < 1) throw InvalidArgument("need at least one electrode layer");
  if (layer_heights.size() != static_cast<std::size_t>(layers)) {
    throw InvalidArgument("expected one height per electrode layer");
  }
  const Box& box = grid.extent();
  for (double z : layer_heights) {
    if (!(z >= box.min[2] && z <= box.max[2])) {
      throw InvalidArgument("electrode layer height outside the vertical extent");
    }
  }

  const Vec3 center = box.center();
  const double ax = 0.5 * box.span(0);
  const double ay = 0.5 * box.span(1);

  ElectrodeArray array;
  array.per_layer = per_layer;
  array.layers = layers;
  array.positions.reserve(static_cast<std::size_t>(per_layer) * layers);
  for (int l = 0; l < layers; ++l) {
    for (int k = 0; k < per_layer; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / per_layer;
      array.positions.push_back(
          {center[0] + ax * std::cos(angle), center[1] + ay * std::sin(angle), layer_heights[l]});
      array.layer.push_back(l);
    }
  }
  return array;
}

ElectrodeArray default_electrodes(const GridGeometry& grid) {
  const Box& box = grid.extent();
  const double heights[] = {box.min[2] + box.span(2) / 3.0, box.min[2] + 2.0 * box.span(2) / 3.0};
  return place_electrodes(grid, 16, 2, heights);
}

std::string to_string(ProtocolScheme scheme) {
  switch (scheme) {
    case ProtocolScheme::adjacent_in_layer:
      return "adjacent_in_layer";
    case ProtocolScheme::cross_layer:
      return "cross_layer";
  }
  return "unknown";
}

ProtocolScheme protocol_scheme_from_string(const std::string& name) {
  if (name == "adjacent_in_layer") return ProtocolScheme::adjacent_in_layer;
  if (name == "cross_layer") return ProtocolScheme::cross_layer;
  throw InvalidArgument("unknown protocol scheme '" + name + "'");
}

std::string MeasurementProtocol::fingerprint() const {
  const auto bytes = std::as_bytes(std::span<const Quadruple>(pairs));
  return "protocol-" + to_string(scheme) + "-" + std::to_string(pairs.size()) + "-" +
         hex64(fnv1a(bytes));
}

MeasurementProtocol generate_protocol(const ElectrodeArray& array, ProtocolScheme scheme) {
  const int n = array.per_layer;
  if (n < 4 || array.layers < 1 ||
      array.size() != static_cast<std::size_t>(n) * array.layers) {
    throw InvalidArgument("electrode array is not a set of equal rings");
  }
  if (scheme == ProtocolScheme::cross_layer && array.layers < 2) {
    throw InvalidArgument("cross_layer protocol needs at least two electrode layers");
  }

  MeasurementProtocol protocol;
  protocol.scheme = scheme;
  for (int drive_layer = 0; drive_layer < array.layers; ++drive_layer) {
    for (int k = 0; k < n; ++k) {
      const int source = drive_layer * n + k;
      const int sink = drive_layer * n + (k + 1) % n;
      const int first_layer = scheme == ProtocolScheme::cross_layer ? 0 : drive_layer;
      const int last_layer = scheme == ProtocolScheme::cross_layer ? array.layers - 1 : drive_layer;
      for (int ml = first_layer; ml <= last_layer; ++ml) {
        for (int m = 0; m < n; ++m) {
          const int plus = ml * n + m;
          const int minus = ml * n + (m + 1) % n;
          if (plus == source || plus == sink || minus == source || minus == sink) continue;
          protocol.pairs.push_back({source, sink, plus, minus});
        }
      }
    }
  }
  return protocol;
}

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace d2ip
