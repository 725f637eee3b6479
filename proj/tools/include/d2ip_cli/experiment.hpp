#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "d2ip/baselines.hpp"
#include "d2ip/pipeline.hpp"
#include "d2ip/serialization.hpp"

namespace d2ip::cli {

enum class Scenario { case1, case2, external };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

enum class Method { d2ip, tikhonov, tv };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

/// Everything needed to re-run a simulate or reconstruct command.
struct ExperimentConfig {
  Scenario scenario = Scenario::case1;
  int rows = 16;
  int cols = 16;
  int planes = 8;
  /// Thorax box spans (x, y, z) in meters; x and y are centred on 0, z starts at 0.
  std::array<double, 3> extent{0.32, 0.24, 0.16};
  int frames = 20;
  double snr_db = kNoiseFree;
  std::uint64_t seed = 0;
  ProtocolScheme protocol = ProtocolScheme::adjacent_in_layer;

  Method method = Method::d2ip;
  std::vector<double> mu{0.005};
  TVConfig tv;
  RunConfig run;
  std::set<AblationFlag> disable;

  /// Effective pipeline config after applying the ablation flags.
  RunConfig effective_run() const { return ablation_mode(run, disable); }
  Box box() const;
  void validate() const;
};

/// The ten regularization values 0.001, 0.002, ..., 0.010.
std::vector<double> default_mu_sweep();

std::string experiment_to_json(const ExperimentConfig& cfg);
/// Partial documents override only the keys they name.
ExperimentConfig experiment_from_json(const std::string& text, const ExperimentConfig& base = {});

/// Geometry, operator, phantom and measurements of a simulated scenario.
struct ScenarioData {
  GeometryRecord geometry;
  SensitivityMatrix J;
  LungPhantomSpec phantom;
  ConductivitySequence truth;
  VoltageSequence voltages;
};

/// Grid, belt, protocol and normalized operator for the configured grid.
GeometryRecord make_geometry(const ExperimentConfig& cfg);
SensitivityMatrix make_operator(const GeometryRecord& geometry);

/// Builds a case1 or case2 scenario in memory.
ScenarioData make_scenario(const ExperimentConfig& cfg);

/// Resolves a relative output path against $D2IP_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& p);

}  // namespace d2ip::cli
