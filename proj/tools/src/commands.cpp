#include "d2ip_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "d2ip/error.hpp"
#include "d2ip/metrics.hpp"
#include "d2ip_cli/plot.hpp"

namespace d2ip::cli {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string mu_label(double mu) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", mu);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  return in;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) {
    throw IoError("missing " + what + ": " + path.string());
  }
}

void write_manifest(const fs::path& dir, json manifest) {
  manifest["tool"] = "d2ip";
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// Accumulated per-frame timing. Frame 0 holds one-off setup (warm-start
// pretraining or the Tikhonov factorization).
struct TimingRow {
  std::string label;
  int frame = 0;
  double seconds = 0.0;
  double accumulated = 0.0;
};

void append_timing(std::vector<TimingRow>& rows, const std::string& label, double setup,
                   std::span<const double> per_frame) {
  double acc = setup;
  rows.push_back({label, 0, setup, acc});
  for (std::size_t i = 0; i < per_frame.size(); ++i) {
    acc += per_frame[i];
    rows.push_back({label, static_cast<int>(i + 1), per_frame[i], acc});
  }
}

void write_timing_csv(const fs::path& path, const std::vector<TimingRow>& rows) {
  auto out = open_out(path);
  out << "label,frame,seconds,accumulated\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.frame << ',' << fmt(r.seconds) << ',' << fmt(r.accumulated) << '\n';
  }
}

std::vector<TimingRow> read_timing_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "label,frame,seconds,accumulated") {
    throw FormatError("timing csv: unexpected header in " + path.string());
  }
  std::vector<TimingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    TimingRow r;
    if (comma == std::string::npos ||
        std::sscanf(line.c_str() + comma + 1, "%d,%lf,%lf", &r.frame, &r.seconds,
                    &r.accumulated) != 3) {
      throw FormatError("timing csv: malformed row '" + line + "'");
    }
    r.label = line.substr(0, comma);
    rows.push_back(r);
  }
  return rows;
}

struct Inputs {
  GeometryRecord geometry;
  SensitivityMatrix J;
  VoltageSequence V;
};

Inputs load_inputs(const fs::path& dir) {
  require_file(dir / "geometry.json", "geometry");
  require_file(dir / "sensitivity.bin", "sensitivity matrix");
  require_file(dir / "voltages.bin", "voltage sequence");
  Inputs in{load_geometry(dir / "geometry.json"), load_matrix(dir / "sensitivity.bin"),
            load_voltages(dir / "voltages.bin")};
  if (in.J.voxels() != in.geometry.grid.voxel_count()) {
    throw InvalidArgument("sensitivity matrix has " + std::to_string(in.J.voxels()) +
                          " columns, geometry has " +
                          std::to_string(in.geometry.grid.voxel_count()) + " voxels");
  }
  if (in.V.measurements() != in.J.measurements()) {
    throw InvalidArgument("voltages have " + std::to_string(in.V.measurements()) +
                          " measurements, the operator has " +
                          std::to_string(in.J.measurements()));
  }
  return in;
}

ConductivitySequence baseline_sequence(const Inputs& in, const std::string& method) {
  ConductivitySequence seq;
  seq.grid_ref = in.geometry.grid.fingerprint();
  seq.is_ground_truth = false;
  seq.reference_mode = in.V.reference_mode;
  seq.source = method;
  return seq;
}

json stages_json(const ReconstructionResult& r) {
  json stages = json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"stage", s.stage},
                      {"frame", s.frame},
                      {"start", to_string(s.start)},
                      {"iterations", s.iterations},
                      {"initial_checksum", hex64(s.initial_checksum)},
                      {"final_checksum", hex64(s.final_checksum)},
                      {"noise_checksum", hex64(s.noise_checksum)},
                      {"seconds", s.seconds}});
  }
  return stages;
}

int reconstruct_d2ip(const ExperimentConfig& cfg, const ReconstructOptions& opts,
                     const Inputs& in, json& manifest) {
  const RunConfig run = cfg.effective_run();
  ReconstructionResult r = reconstruct_sequence(in.geometry.grid, in.J, in.V, run);

  if (!r.sequence.frames.empty()) save_conductivity(opts.out_dir / "recon.bin", r.sequence);
  {
    auto out = open_out(opts.out_dir / "traces.csv");
    write_trace_csv(out, r.traces);
  }
  std::vector<TimingRow> timing;
  append_timing(timing, "d2ip", r.warm_start_seconds, r.frame_seconds);
  write_timing_csv(opts.out_dir / "timing.csv", timing);
  save_run_config(opts.out_dir / "run_config.json", run);

  if (opts.write_checkpoints) {
    const fs::path ckpt = opts.out_dir / "checkpoints";
    ensure_dir(ckpt);
    for (const auto& s : r.stages) {
      char name[32];
      if (s.stage == "upws") {
        std::snprintf(name, sizeof name, "upws.ckpt");
      } else {
        std::snprintf(name, sizeof name, "frame_%03d.ckpt", s.frame);
      }
      save_checkpoint(ckpt / name, s.final_state);
    }
  }

  manifest["noise_seed"] = r.noise_seed;
  manifest["noise_checksum"] = hex64(r.noise_checksum);
  manifest["stages"] = stages_json(r);
  manifest["frames_completed"] = r.sequence.frames.size();
  if (r.failure) {
    manifest["failure"] = {
        {"frame", r.failure->frame}, {"stage", r.failure->stage}, {"message", r.failure->message}};
    std::cerr << "d2ip: run failed at " << r.failure->stage << " frame " << r.failure->frame
              << ": " << r.failure->message << "\n";
    return kExitNumerical;
  }
  manifest["failure"] = nullptr;
  return kExitOk;
}

int reconstruct_tikhonov(const ExperimentConfig& cfg, const ReconstructOptions& opts,
                         const Inputs& in, json& manifest) {
  const auto t0 = Clock::now();
  const TikhonovSolver solver(in.J);
  const double setup = seconds_since(t0);

  const std::size_t T = in.V.frame_count();
  std::vector<ConductivitySequence> results(cfg.mu.size());
  std::vector<std::vector<double>> seconds(cfg.mu.size(), std::vector<double>(T, 0.0));

  auto run_one = [&](std::size_t k) {
    ConductivitySequence seq = baseline_sequence(in, "tikhonov");
    seq.conductivities["mu"] = cfg.mu[k];
    for (std::size_t i = 0; i < T; ++i) {
      const auto f0 = Clock::now();
      seq.frames.push_back(solver.solve(in.V.frames[i].values, cfg.mu[k]));
      seconds[k][i] = seconds_since(f0);
    }
    results[k] = std::move(seq);
  };

  const int jobs = std::clamp(opts.jobs, 1, static_cast<int>(cfg.mu.size()));
  if (jobs == 1) {
    for (std::size_t k = 0; k < cfg.mu.size(); ++k) run_one(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t k = next++; k < cfg.mu.size(); k = next++) run_one(k);
      });
    }
    for (auto& w : workers) w.join();
  }

  std::vector<TimingRow> timing;
  json outputs = json::array();
  for (std::size_t k = 0; k < cfg.mu.size(); ++k) {
    const std::string stem = "recon_mu_" + mu_label(cfg.mu[k]);
    save_conductivity(opts.out_dir / (stem + ".bin"), results[k]);
    append_timing(timing, "tikhonov_mu_" + mu_label(cfg.mu[k]), setup, seconds[k]);
    outputs.push_back(stem + ".bin");
  }
  write_timing_csv(opts.out_dir / "timing.csv", timing);
  manifest["reconstructions"] = outputs;
  return kExitOk;
}

int reconstruct_tv(const ExperimentConfig& cfg, const ReconstructOptions& opts, const Inputs& in,
                   json&) {
  ConductivitySequence seq = baseline_sequence(in, "tv");
  seq.conductivities["lambda_tv"] = cfg.tv.lambda_tv;
  std::vector<double> seconds;
  auto trace = open_out(opts.out_dir / "tv_traces.csv");
  trace << "frame,iteration,loss\n";
  for (std::size_t i = 0; i < in.V.frame_count(); ++i) {
    const auto f0 = Clock::now();
    TVResult r = tv_reconstruct(in.J, in.V.frames[i].values, in.geometry.grid, cfg.tv);
    seconds.push_back(seconds_since(f0));
    for (std::size_t k = 0; k < r.loss_trace.size(); ++k) {
      trace << i + 1 << ',' << k << ',' << fmt(r.loss_trace[k]) << '\n';
    }
    seq.frames.push_back(std::move(r.x));
  }
  save_conductivity(opts.out_dir / "recon.bin", seq);
  std::vector<TimingRow> timing;
  append_timing(timing, "tv", 0.0, seconds);
  write_timing_csv(opts.out_dir / "timing.csv", timing);
  return kExitOk;
}

// Per-frame data-term traces of a D2IP run, keyed by frame (0 = warm start).
std::map<int, LossTrace> load_traces(const fs::path& path) {
  auto in = open_in(path);
  std::map<int, LossTrace> traces;
  for (const auto& r : read_trace_csv(in)) {
    auto& t = traces[r.frame];
    t.frame = r.frame;
    t.stage = r.frame == 0 ? "upws" : "frame";
    t.records.push_back(r);
  }
  return traces;
}

std::string run_name(const fs::path& dir) {
  const fs::path clean = dir.lexically_normal();
  std::string name = (clean.has_filename() ? clean : clean.parent_path()).filename().string();
  return name.empty() ? "run" : name;
}

std::optional<FrameMetrics> metrics_means(const fs::path& dir, const std::string& stem,
                                          bool single) {
  fs::path path = dir / ("metrics_" + stem + ".csv");
  if (!fs::is_regular_file(path)) {
    if (!single || !fs::is_regular_file(dir / "metrics.csv")) return std::nullopt;
    path = dir / "metrics.csv";
  }
  auto in = open_in(path);
  return read_metrics_csv(in).means;
}

}  // namespace

int cmd_simulate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const ScenarioData s = make_scenario(cfg);
  ensure_dir(out_dir);

  save_geometry(out_dir / "geometry.json", s.geometry);
  save_matrix(out_dir / "sensitivity.bin", s.J);
  save_voltages(out_dir / "voltages.bin", s.voltages);
  // Case 2 is differential against frame 1 and is not treated as ground truth.
  const std::string phantom_file = cfg.scenario == Scenario::case1 ? "truth.bin" : "phantom.bin";
  ConductivitySequence phantom = s.truth;
  phantom.is_ground_truth = cfg.scenario == Scenario::case1;
  save_conductivity(out_dir / phantom_file, phantom);

  write_manifest(out_dir, {{"command", "simulate"},
                           {"experiment", json::parse(experiment_to_json(cfg))},
                           {"outputs",
                            {"geometry.json", "sensitivity.bin", "voltages.bin", phantom_file}},
                           {"frames", s.voltages.frame_count()},
                           {"measurements", s.voltages.measurements()},
                           {"voxels", s.geometry.grid.voxel_count()}});
  std::cout << "simulate: " << s.voltages.frame_count() << " frames of "
            << s.voltages.measurements() << " measurements -> " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_reconstruct(const ExperimentConfig& cfg, const ReconstructOptions& opts) {
  cfg.validate();
  const Inputs in = load_inputs(opts.input_dir);
  ensure_dir(opts.out_dir);
  // The run directory carries its own geometry so evaluation needs nothing else.
  fs::copy_file(opts.input_dir / "geometry.json", opts.out_dir / "geometry.json",
                fs::copy_options::overwrite_existing);

  json manifest{{"command", "reconstruct"},
                {"experiment", json::parse(experiment_to_json(cfg))},
                {"input_dir", fs::absolute(opts.input_dir).lexically_normal().string()},
                {"method", to_string(cfg.method)}};
  int code = kExitOk;
  switch (cfg.method) {
    case Method::d2ip:
      code = reconstruct_d2ip(cfg, opts, in, manifest);
      break;
    case Method::tikhonov:
      code = reconstruct_tikhonov(cfg, opts, in, manifest);
      break;
    case Method::tv:
      code = reconstruct_tv(cfg, opts, in, manifest);
      break;
  }
  write_manifest(opts.out_dir, manifest);
  std::cout << "reconstruct: " << to_string(cfg.method) << " -> " << opts.out_dir.string()
            << "\n";
  return code;
}

int cmd_evaluate(const EvaluateOptions& opts) {
  if (opts.recon.empty()) throw InvalidArgument("evaluate: no reconstruction given");
  for (const auto& r : opts.recon) require_file(r, "reconstruction");
  const fs::path out_dir = opts.out_dir.empty() ? opts.recon.front().parent_path() : opts.out_dir;
  ensure_dir(out_dir);

  std::optional<ConductivitySequence> truth;
  if (!opts.truth.empty() && fs::is_regular_file(opts.truth)) {
    truth = load_conductivity(opts.truth);
    if (!truth->is_ground_truth) truth.reset();
  }
  if (!truth) {
    write_text(out_dir / "no_ground_truth",
               "no ground truth: metrics skipped\n");
    std::cout << "evaluate: no ground truth, metrics skipped\n";
    return kExitOk;
  }

  const fs::path geometry_path =
      opts.geometry.empty() ? opts.recon.front().parent_path() / "geometry.json" : opts.geometry;
  require_file(geometry_path, "geometry");
  const GeometryRecord geometry = load_geometry(geometry_path);

  std::vector<Series> cc_s, psnr_s, mssim_s, err_s;
  for (const auto& path : opts.recon) {
    const ConductivitySequence recon = load_conductivity(path);
    if (recon.frame_count() != truth->frame_count()) {
      throw InvalidArgument("evaluate: " + path.string() + " has " +
                            std::to_string(recon.frame_count()) + " frames, truth has " +
                            std::to_string(truth->frame_count()));
    }
    const MetricsReport report = evaluate_sequence(recon, *truth, geometry.grid);
    const std::string stem = path.stem().string();
    const fs::path csv =
        out_dir / (opts.recon.size() == 1 ? std::string("metrics.csv") : "metrics_" + stem + ".csv");
    {
      auto out = open_out(csv);
      write_metrics_csv(out, report);
    }
    Series cc{stem, {}, {}}, ps{stem, {}, {}}, ms{stem, {}, {}}, er{stem, {}, {}};
    for (const auto& m : report.per_frame) {
      cc.x.push_back(m.frame);
      cc.y.push_back(m.cc);
      ps.x.push_back(m.frame);
      ps.y.push_back(m.psnr);
      ms.x.push_back(m.frame);
      ms.y.push_back(m.mssim);
      er.x.push_back(m.frame);
      er.y.push_back(m.err);
    }
    cc_s.push_back(std::move(cc));
    psnr_s.push_back(std::move(ps));
    mssim_s.push_back(std::move(ms));
    err_s.push_back(std::move(er));
    std::cout << "evaluate: " << stem << " mean CC " << report.means.cc << ", PSNR "
              << report.means.psnr << ", MSSIM " << report.means.mssim << ", ERR "
              << report.means.err << "\n";
  }
  write_line_plot(out_dir / "cc.png", {"CC per frame", "frame", "CC"}, cc_s);
  write_line_plot(out_dir / "psnr.png", {"PSNR per frame", "frame", "PSNR (dB)"}, psnr_s);
  write_line_plot(out_dir / "mssim.png", {"MSSIM per frame", "frame", "MSSIM"}, mssim_s);
  write_line_plot(out_dir / "err.png", {"ERR per frame", "frame", "ERR"}, err_s);
  return kExitOk;
}

int cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw InvalidArgument("report: no run directories given");
  ensure_dir(out_dir);

  struct Run {
    fs::path dir;
    std::string name;
    json manifest;
    std::vector<TimingRow> timing;
  };
  std::vector<Run> runs;
  for (const auto& dir : run_dirs) {
    require_file(dir / "timing.csv", "timing csv");
    require_file(dir / "manifest.json", "manifest");
    Run r{dir, run_name(dir), {}, read_timing_csv(dir / "timing.csv")};
    try {
      r.manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
      throw FormatError("manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    runs.push_back(std::move(r));
  }

  // Accumulated time and summary table.
  std::vector<Series> time_series;
  auto summary = open_out(out_dir / "summary.csv");
  summary << "run,label,frames,setup_seconds,total_seconds,mean_frame_seconds,cc,psnr,mssim,err\n";
  for (const auto& run : runs) {
    std::map<std::string, std::vector<TimingRow>> by_label;
    for (const auto& row : run.timing) by_label[row.label].push_back(row);
    for (const auto& [label, rows] : by_label) {
      std::string short_label = label;
      if (short_label.rfind("tikhonov_mu_", 0) == 0) short_label = "mu=" + label.substr(12);
      Series s{run.name + ":" + short_label, {}, {}};
      double setup = 0.0, total = 0.0;
      int frames = 0;
      for (const auto& row : rows) {
        s.x.push_back(row.frame);
        s.y.push_back(row.accumulated);
        if (row.frame == 0) {
          setup = row.seconds;
        } else {
          ++frames;
        }
        total = std::max(total, row.accumulated);
      }
      time_series.push_back(std::move(s));

      std::string stem = "recon";
      if (label.rfind("tikhonov_mu_", 0) == 0) stem = "recon_mu_" + label.substr(12);
      const auto means = metrics_means(run.dir, stem, by_label.size() == 1);
      summary << run.name << ',' << label << ',' << frames << ',' << fmt(setup) << ','
              << fmt(total) << ',' << fmt(frames ? (total - setup) / frames : 0.0);
      if (means) {
        summary << ',' << fmt(means->cc) << ',' << fmt(means->psnr) << ',' << fmt(means->mssim)
                << ',' << fmt(means->err) << '\n';
      } else {
        summary << ",,,,\n";
      }
    }
  }
  PlotSpec time_spec{"Accumulated time", "frame", "seconds"};
  time_spec.step = true;
  write_line_plot(out_dir / "accumulated_time.png", time_spec, time_series);

  // Convergence curves and the ablation table for D2IP runs.
  struct Traced {
    const Run* run;
    std::map<int, LossTrace> traces;
    bool cold = false;
  };
  std::vector<Traced> traced;
  for (const auto& run : runs) {
    if (!fs::is_regular_file(run.dir / "traces.csv")) continue;
    Traced t{&run, load_traces(run.dir / "traces.csv")};
    std::vector<Series> curves;
    for (const auto& [frame, trace] : t.traces) {
      Series s{frame == 0 ? std::string("warm start") : "frame " + std::to_string(frame), {}, {}};
      for (const auto& r : trace.records) {
        s.x.push_back(r.iteration);
        s.y.push_back(r.data);
      }
      curves.push_back(std::move(s));
    }
    PlotSpec spec{"Data term " + run.name, "iteration", "data term"};
    spec.log_y = true;
    write_line_plot(out_dir / ("convergence_" + run.name + ".png"), spec, curves);

    if (run.manifest.contains("experiment")) {
      const auto& ex = run.manifest["experiment"];
      const auto disable = ex.value("disable", json::array());
      const bool no_upws = std::find(disable.begin(), disable.end(), "upws") != disable.end();
      const bool no_tpp = std::find(disable.begin(), disable.end(), "tpp") != disable.end();
      t.cold = no_upws && no_tpp;
    }
    traced.push_back(std::move(t));
  }

  const auto cold = std::find_if(traced.begin(), traced.end(), [](const Traced& t) { return t.cold; });
  if (cold != traced.end()) {
    auto table = open_out(out_dir / "ablation.csv");
    table << "run,frame,threshold,iterations,cold_iterations,speedup\n";
    for (const auto& [frame, ctrace] : cold->traces) {
      if (frame == 0 || ctrace.empty()) continue;
      const double threshold = 1.05 * ctrace.back().data;
      const auto cold_iters = iterations_to_threshold(ctrace, threshold);
      for (const auto& t : traced) {
        const auto it = t.traces.find(frame);
        if (it == t.traces.end()) continue;
        const auto iters = iterations_to_threshold(it->second, threshold);
        table << t.run->name << ',' << frame << ',' << fmt(threshold) << ',';
        if (iters) {
          table << *iters;
        }
        table << ',' << (cold_iters ? std::to_string(*cold_iters) : std::string()) << ',';
        if (iters && cold_iters) {
          table << fmt(static_cast<double>(*cold_iters) / std::max(1, *iters));
        }
        table << '\n';
      }
    }
  }
  std::cout << "report: " << runs.size() << " runs -> " << out_dir.string() << "\n";
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidArgument*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DegenerateOperator*>(&e) ||
      dynamic_cast<const UndefinedMetric*>(&e)) {
    return kExitNumerical;
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  return kExitOther;
}

}  // namespace d2ip::cli
