#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "d2ip_cli/experiment.hpp"

namespace d2ip::cli {

namespace fs = std::filesystem;

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

/// Writes geometry.json, sensitivity.bin, voltages.bin, the phantom
/// (truth.bin for case1, phantom.bin for case2) and manifest.json.
int cmd_simulate(const ExperimentConfig& cfg, const fs::path& out_dir);

struct ReconstructOptions {
  /// Directory holding geometry.json, sensitivity.bin and voltages.bin.
  fs::path input_dir;
  fs::path out_dir;
  /// Worker threads for the Tikhonov mu sweep.
  int jobs = 1;
  bool write_checkpoints = true;
};

/// Runs the configured method. Returns kExitNumerical when a D2IP run
/// failed part way; the frames finished before the failure are still
/// written.
int cmd_reconstruct(const ExperimentConfig& cfg, const ReconstructOptions& opts);

struct EvaluateOptions {
  std::vector<fs::path> recon;
  /// Empty or missing means no ground truth is available.
  fs::path truth;
  /// Defaults to geometry.json next to the first reconstruction.
  fs::path geometry;
  fs::path out_dir;
};

/// metrics.csv (one file per reconstruction when several are given) and
/// cc/psnr/mssim/err line plots. Without ground truth only a marker file
/// is written.
int cmd_evaluate(const EvaluateOptions& opts);

/// Accumulated-time chart and summary over several run directories, a
/// convergence plot per D2IP run and, when a cold-start run is among them,
/// an iterations-to-threshold speedup table.
int cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir);

/// Maps an exception thrown by a command to its exit code.
int exit_code_for(const std::exception& e);

}  // namespace d2ip::cli
