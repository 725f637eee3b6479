#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "d2ip/forward.hpp"
#include "d2ip/geometry.hpp"
#include "d2ip/phantom.hpp"
#include "d2ip/pipeline.hpp"
#include "d2ip/priornet.hpp"

namespace d2ip {

namespace fs = std::filesystem;

// Binary payloads are raw little-endian float64. Each payload `x.bin` has a
// JSON sidecar `x.json` next to it. Open failures raise IoError, malformed
// content raises FormatError.

fs::path sidecar_path(const fs::path& payload);

void write_doubles(const fs::path& path, std::span<const double> values);
/// Throws FormatError unless the file holds exactly `count` values.
std::vector<double> read_doubles(const fs::path& path, std::size_t count);

void save_matrix(const fs::path& path, const SensitivityMatrix& J);
SensitivityMatrix load_matrix(const fs::path& path);

void save_voltages(const fs::path& path, const VoltageSequence& V);
VoltageSequence load_voltages(const fs::path& path);

void save_conductivity(const fs::path& path, const ConductivitySequence& seq);
ConductivitySequence load_conductivity(const fs::path& path);

struct GeometryRecord {
  GridGeometry grid;
  ElectrodeArray electrodes;
  MeasurementProtocol protocol;
};

/// JSON geometry description {R, C, P, extent, ordering, electrodes, protocol}.
void save_geometry(const fs::path& path, const GeometryRecord& geometry);
GeometryRecord load_geometry(const fs::path& path);

/// Checkpoint: "D2IPCKPT", u32 header length, JSON header (version, config
/// hash, provenance, iteration, tensor names and dims), then the tensors.
void save_checkpoint(const fs::path& path, const ParameterState& theta);
/// Throws InvalidArgument when the stored config hash differs from
/// expected.hash() or the tensors do not follow its schema.
ParameterState load_checkpoint(const fs::path& path, const NetworkConfig& expected);

/// Run configuration as JSON text. Parsing starts from the defaults, so a
/// partial document overrides only the keys it names; unknown keys are
/// rejected.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(std::string_view text);
RunConfig run_config_from_json(std::string_view text, const RunConfig& base);
void save_run_config(const fs::path& path, const RunConfig& cfg);
RunConfig load_run_config(const fs::path& path);

/// CSV "frame,iteration,data,reg,total,seconds"; warm-start rows use frame 0.
void write_trace_csv(std::ostream& out, std::span<const LossTrace> traces);
std::vector<LossRecord> read_trace_csv(std::istream& in);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

}  // namespace d2ip
