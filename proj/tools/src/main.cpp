#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "d2ip/error.hpp"
#include "d2ip_cli/commands.hpp"

namespace {

using namespace d2ip;
using namespace d2ip::cli;

// Experiment flags. Each is applied only when given, on top of the defaults
// and the optional --config file.
struct ExperimentFlags {
  std::string config;
  std::optional<std::string> scenario, protocol, method, profile;
  std::optional<int> rows, cols, planes, frames;
  std::optional<std::vector<double>> extent, mu;
  std::optional<std::string> snr;
  std::optional<std::uint64_t> seed, run_seed;
  bool mu_sweep = false;
  std::optional<double> tv_lambda, tv_step, lr, lambda_tv, lambda_s, lambda_t;
  std::optional<int> tv_iters, iters_warm, iters_first, iters_next, base_channels, record_every;
  std::optional<std::vector<std::string>> disable;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON experiment config; flags override it");
    app->add_option("--scenario", scenario, "case1, case2 or external");
    app->add_option("--rows", rows, "Grid rows (y)");
    app->add_option("--cols", cols, "Grid columns (x)");
    app->add_option("--planes", planes, "Grid planes (z)");
    app->add_option("--extent", extent, "Box spans x y z in meters")->expected(3);
    app->add_option("--frames,-T", frames, "Number of time frames");
    app->add_option("--snr", snr, "Measurement SNR in dB, or 'inf' for noise-free");
    app->add_option("--seed", seed, "Measurement noise seed (also the network seed by default)");
    app->add_option("--run-seed", run_seed, "Network initialization and Z seed");
    app->add_option("--protocol", protocol, "adjacent_in_layer or adjacent_cross_layer");
    app->add_option("--method", method, "d2ip, tikhonov or tv");
    app->add_option("--mu", mu, "Tikhonov regularization values");
    app->add_flag("--mu-sweep", mu_sweep, "Sweep mu over 0.001..0.010");
    app->add_option("--tv-lambda", tv_lambda, "TV baseline weight");
    app->add_option("--tv-iters", tv_iters, "TV baseline iterations");
    app->add_option("--tv-step", tv_step, "TV baseline initial step size");
    app->add_option("--profile", profile, "Learning-rate profile: simulation or measured");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--iters-warm", iters_warm, "Warm-start iterations N0");
    app->add_option("--iters-first", iters_first, "Frame 1 iterations N1");
    app->add_option("--iters-next", iters_next, "Iterations for each later frame");
    app->add_option("--lambda-tv", lambda_tv, "4D-TV weight");
    app->add_option("--lambda-s", lambda_s, "Spatial TV weight");
    app->add_option("--lambda-t", lambda_t, "Temporal TV weight");
    app->add_option("--base-channels", base_channels, "Network base channel count");
    app->add_option("--record-every", record_every, "Trace subsampling stride");
    app->add_option("--disable", disable, "Ablations: upws, tpp")->delimiter(',');
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config.empty()) cfg = experiment_from_json(read_text(config), cfg);
    if (scenario) cfg.scenario = scenario_from_string(*scenario);
    if (rows) cfg.rows = *rows;
    if (cols) cfg.cols = *cols;
    if (planes) cfg.planes = *planes;
    if (extent) cfg.extent = {(*extent)[0], (*extent)[1], (*extent)[2]};
    if (frames) cfg.frames = *frames;
    if (snr) {
      if (*snr == "inf" || *snr == "none") {
        cfg.snr_db = kNoiseFree;
      } else {
        try {
          cfg.snr_db = std::stod(*snr);
        } catch (const std::exception&) {
          throw InvalidArgument("--snr expects a number or 'inf', got '" + *snr + "'");
        }
      }
    }
    if (seed) {
      cfg.seed = *seed;
      cfg.run.seed = *seed;
    }
    if (run_seed) cfg.run.seed = *run_seed;
    if (protocol) cfg.protocol = protocol_scheme_from_string(*protocol);
    if (method) cfg.method = method_from_string(*method);
    if (mu) cfg.mu = *mu;
    if (mu_sweep) cfg.mu = default_mu_sweep();
    if (tv_lambda) cfg.tv.lambda_tv = *tv_lambda;
    if (tv_iters) cfg.tv.iterations = *tv_iters;
    if (tv_step) cfg.tv.step_size = *tv_step;
    if (profile) {
      if (*profile == "simulation") {
        cfg.run.learning_rate = kLearningRateSimulation;
      } else if (*profile == "measured") {
        cfg.run.learning_rate = kLearningRateMeasured;
      } else {
        throw InvalidArgument("unknown profile '" + *profile + "'");
      }
    }
    if (lr) cfg.run.learning_rate = *lr;
    if (iters_warm) cfg.run.iters_warm = *iters_warm;
    if (iters_first) cfg.run.iters_first = *iters_first;
    if (iters_next) cfg.run.iters_next = *iters_next;
    if (lambda_tv) cfg.run.tv_weights.lambda_tv = *lambda_tv;
    if (lambda_s) cfg.run.tv_weights.lambda_s = *lambda_s;
    if (lambda_t) cfg.run.tv_weights.lambda_t = *lambda_t;
    if (base_channels) cfg.run.network.base_channels = *base_channels;
    if (record_every) cfg.run.record_every = *record_every;
    if (disable) {
      cfg.disable.clear();
      for (const auto& f : *disable) cfg.disable.insert(ablation_flag_from_string(f));
    }
    cfg.validate();
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Time-sequence 3D EIT reconstruction with an untrained network prior"};
  app.require_subcommand(1);

  ExperimentFlags sim_flags;
  std::string sim_out = "sim";
  auto* sim = app.add_subcommand("simulate", "Simulate a phantom and its measurements");
  sim_flags.add_to(sim);
  sim->add_option("--out,-o", sim_out, "Output directory");

  ExperimentFlags rec_flags;
  ReconstructOptions rec_opts;
  std::string rec_in = "sim", rec_out = "run";
  bool no_checkpoints = false;
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a voltage sequence");
  rec_flags.add_to(rec);
  rec->add_option("--input,-i", rec_in, "Directory written by simulate (or external data)");
  rec->add_option("--out,-o", rec_out, "Output directory");
  rec->add_option("--jobs,-j", rec_opts.jobs, "Threads for the Tikhonov mu sweep");
  rec->add_flag("--no-checkpoints", no_checkpoints, "Skip per-stage checkpoints");

  std::vector<std::string> eval_recon;
  std::string eval_truth, eval_geometry, eval_out;
  auto* eval = app.add_subcommand("evaluate", "Score reconstructions against ground truth");
  eval->add_option("--recon,-r", eval_recon, "Reconstruction file(s)")->required();
  eval->add_option("--truth,-t", eval_truth, "Ground-truth conductivity file");
  eval->add_option("--geometry,-g", eval_geometry, "geometry.json (default: next to the recon)");
  eval->add_option("--out,-o", eval_out, "Output directory (default: the recon's directory)");

  std::vector<std::string> report_runs;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "Cross-run timing, convergence and ablation report");
  report->add_option("runs", report_runs, "Run directories")->required();
  report->add_option("--out,-o", report_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (sim->parsed()) return cmd_simulate(sim_flags.resolve(), resolve_output(sim_out));
  if (rec->parsed()) {
    rec_opts.input_dir = resolve_output(rec_in);
    rec_opts.out_dir = resolve_output(rec_out);
    rec_opts.write_checkpoints = !no_checkpoints;
    return cmd_reconstruct(rec_flags.resolve(), rec_opts);
  }
  if (eval->parsed()) {
    EvaluateOptions opts;
    for (const auto& r : eval_recon) opts.recon.push_back(resolve_output(r));
    if (!eval_truth.empty()) opts.truth = resolve_output(eval_truth);
    if (!eval_geometry.empty()) opts.geometry = resolve_output(eval_geometry);
    if (!eval_out.empty()) opts.out_dir = resolve_output(eval_out);
    return cmd_evaluate(opts);
  }
  std::vector<fs::path> dirs;
  for (const auto& r : report_runs) dirs.push_back(resolve_output(r));
  return cmd_report(dirs, resolve_output(report_out));
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "d2ip: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
