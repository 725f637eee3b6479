#include "d2ip_cli/experiment.hpp"

#include <cmath>
#include <cstdlib>

#include <json.hpp>

#include "d2ip/error.hpp"

namespace d2ip::cli {

using nlohmann::json;

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::case1:
      return "case1";
    case Scenario::case2:
      return "case2";
    case Scenario::external:
      return "external";
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "case1") return Scenario::case1;
  if (name == "case2") return Scenario::case2;
  if (name == "external") return Scenario::external;
  throw InvalidArgument("unknown scenario '" + name + "' (expected case1, case2 or external)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::d2ip:
      return "d2ip";
    case Method::tikhonov:
      return "tikhonov";
    case Method::tv:
      return "tv";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "d2ip") return Method::d2ip;
  if (name == "tikhonov") return Method::tikhonov;
  if (name == "tv") return Method::tv;
  throw InvalidArgument("unknown method '" + name + "' (expected d2ip, tikhonov or tv)");
}

Box ExperimentConfig::box() const {
  return Box{{-extent[0] / 2, -extent[1] / 2, 0.0}, {extent[0] / 2, extent[1] / 2, extent[2]}};
}

void ExperimentConfig::validate() const {
  if (rows < 1 || cols < 1 || planes < 1) throw InvalidArgument("grid dimensions must be >= 1");
  for (double e : extent) {
    if (!(e > 0.0)) throw InvalidArgument("extent spans must be positive");
  }
  if (frames < 2) throw InvalidArgument("a scenario needs at least two frames");
  if (std::isnan(snr_db)) throw InvalidArgument("snr_db must be a number");
  if (mu.empty()) throw InvalidArgument("at least one Tikhonov mu is required");
  for (double m : mu) TikhonovConfig{m}.validate();
  if (!(tv.lambda_tv >= 0.0) || tv.iterations < 0 || !(tv.step_size > 0.0)) {
    throw InvalidArgument("invalid TV baseline settings");
  }
  effective_run().validate();
}

std::vector<double> default_mu_sweep() {
  std::vector<double> mu;
  for (int k = 1; k <= 10; ++k) mu.push_back(k * 1e-3);
  return mu;
}

std::string experiment_to_json(const ExperimentConfig& cfg) {
  json disable = json::array();
  for (auto f : cfg.disable) disable.push_back(f == AblationFlag::upws ? "upws" : "tpp");
  const json j{
      {"scenario", to_string(cfg.scenario)},
      {"grid", {{"R", cfg.rows}, {"C", cfg.cols}, {"P", cfg.planes}, {"extent", cfg.extent}}},
      {"frames", cfg.frames},
      {"snr_db", std::isfinite(cfg.snr_db) ? json(cfg.snr_db) : json(nullptr)},
      {"seed", cfg.seed},
      {"protocol", to_string(cfg.protocol)},
      {"method", to_string(cfg.method)},
      {"mu", cfg.mu},
      {"tv",
       {{"lambda_tv", cfg.tv.lambda_tv},
        {"iterations", cfg.tv.iterations},
        {"step_size", cfg.tv.step_size},
        {"epsilon", cfg.tv.epsilon}}},
      {"run", json::parse(run_config_to_json(cfg.run))},
      {"disable", disable},
  };
  return j.dump(2) + "\n";
}

ExperimentConfig experiment_from_json(const std::string& text, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  try {
    const json j = json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const json& v = it.value();
      if (key == "scenario") {
        cfg.scenario = scenario_from_string(v.get<std::string>());
      } else if (key == "grid") {
        cfg.rows = v.value("R", cfg.rows);
        cfg.cols = v.value("C", cfg.cols);
        cfg.planes = v.value("P", cfg.planes);
        cfg.extent = v.value("extent", cfg.extent);
      } else if (key == "frames") {
        cfg.frames = v.get<int>();
      } else if (key == "snr_db") {
        cfg.snr_db = v.is_null() ? kNoiseFree : v.get<double>();
      } else if (key == "seed") {
        cfg.seed = v.get<std::uint64_t>();
      } else if (key == "protocol") {
        cfg.protocol = protocol_scheme_from_string(v.get<std::string>());
      } else if (key == "method") {
        cfg.method = method_from_string(v.get<std::string>());
      } else if (key == "mu") {
        cfg.mu = v.get<std::vector<double>>();
      } else if (key == "tv") {
        cfg.tv.lambda_tv = v.value("lambda_tv", cfg.tv.lambda_tv);
        cfg.tv.iterations = v.value("iterations", cfg.tv.iterations);
        cfg.tv.step_size = v.value("step_size", cfg.tv.step_size);
        cfg.tv.epsilon = v.value("epsilon", cfg.tv.epsilon);
      } else if (key == "run") {
        cfg.run = run_config_from_json(v.dump(), cfg.run);
      } else if (key == "disable") {
        cfg.disable.clear();
        for (const auto& f : v) cfg.disable.insert(ablation_flag_from_string(f.get<std::string>()));
      } else {
        throw InvalidArgument("experiment config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("experiment config: ") + e.what());
  } catch (const FormatError& e) {
    throw InvalidArgument(e.what());
  }
  cfg.validate();
  return cfg;
}

GeometryRecord make_geometry(const ExperimentConfig& cfg) {
  GeometryRecord g{build_grid(cfg.rows, cfg.cols, cfg.planes, cfg.box()), {}, {}};
  g.electrodes = default_electrodes(g.grid);
  g.protocol = generate_protocol(g.electrodes, cfg.protocol);
  return g;
}

SensitivityMatrix make_operator(const GeometryRecord& geometry) {
  return normalize_sensitivity(
      assemble_sensitivity(geometry.grid, geometry.electrodes, geometry.protocol));
}

ScenarioData make_scenario(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario == Scenario::external) {
    throw InvalidArgument("external scenarios are read from files, not simulated");
  }
  ScenarioData s{make_geometry(cfg), {}, {}, {}, {}};
  s.J = make_operator(s.geometry);
  if (cfg.scenario == Scenario::case1) {
    s.phantom = LungPhantomSpec::healthy(s.geometry.grid, cfg.frames);
    s.truth = make_case1(s.geometry.grid, s.phantom);
  } else {
    s.phantom = LungPhantomSpec::edema(s.geometry.grid, cfg.frames);
    s.truth = make_case2(s.geometry.grid, s.phantom);
  }
  s.voltages = synthesize_measurements(s.truth, s.J, cfg.snr_db, cfg.seed);
  return s;
}

std::filesystem::path resolve_output(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("D2IP_OUTPUT_ROOT"); root && *root) {
    return std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace d2ip::cli
