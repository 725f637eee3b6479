#include "d2ip/pipeline.hpp"

#include <chrono>
#include <cmath>

#include <Eigen/Core>

#include "d2ip/error.hpp"

namespace d2ip {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Evaluation {
  LossValue value;
  Volume x;
};

Volume map_output(const Volume& o, const OutputMap& map) {
  Volume x(o.rows(), o.cols(), o.planes());
  const auto src = o.data();
  auto dst = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = map.apply(src[i]);
  return x;
}

// Loss of a mapped volume; when gx is non-empty it receives d(total)/dx.
LossValue volume_loss(const Volume& x, const SensitivityMatrix& J, std::span<const double> dv,
                      const FrameHistory& history, const RunConfig& cfg, std::span<double> gx) {
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data().data(), n);
  const Eigen::Map<const Eigen::VectorXd> d(dv.data(), static_cast<Eigen::Index>(dv.size()));
  const Eigen::VectorXd r = J.values * xv - d;
  const double norm = r.norm();

  LossValue v;
  v.data = cfg.squared_data_term ? norm * norm : norm;
  if (!gx.empty()) {
    Eigen::Map<Eigen::VectorXd> g(gx.data(), n);
    if (cfg.squared_data_term) {
      g.noalias() = 2.0 * (J.values.transpose() * r);
    } else if (norm > 0.0) {
      g.noalias() = J.values.transpose() * (r / norm);
    } else {
      g.setZero();
    }
  }
  const double lambda = cfg.tv_weights.lambda_tv;
  v.reg = lambda == 0.0 ? 0.0 : lambda * tv4d(history, x, cfg.tv_weights, gx, lambda);
  v.total = v.data + v.reg;
  return v;
}

void check_frame_inputs(const SensitivityMatrix& J, std::span<const double> dv, std::size_t q) {
  if (dv.size() != J.measurements()) {
    throw InvalidArgument("measurement frame has " + std::to_string(dv.size()) +
                          " values, operator expects " + std::to_string(J.measurements()));
  }
  if (J.voxels() != q) {
    throw InvalidArgument("operator has " + std::to_string(J.voxels()) + " columns, grid has " +
                          std::to_string(q) + " voxels");
  }
}

Evaluation evaluate(const FastResUNet& net, const ParameterState& theta, const NoiseInput& z,
                    const SensitivityMatrix& J, std::span<const double> dv,
                    const FrameHistory& history, const RunConfig& cfg, ParameterGradients* grads) {
  ForwardPass pass = net.run(theta, z);
  Evaluation e{{}, map_output(pass.output(), cfg.output_map)};
  check_frame_inputs(J, dv, e.x.size());
  if (!grads) {
    e.value = volume_loss(e.x, J, dv, history, cfg, {});
    return e;
  }
  std::vector<double> g(e.x.size(), 0.0);
  e.value = volume_loss(e.x, J, dv, history, cfg, g);
  const double slope = cfg.output_map.slope();
  for (double& gi : g) gi *= slope;
  pass.backward(g, *grads);
  return e;
}

bool finite(const LossValue& v) {
  return std::isfinite(v.data) && std::isfinite(v.reg) && std::isfinite(v.total);
}

}  // namespace

RunConfig RunConfig::measured() {
  RunConfig cfg;
  cfg.learning_rate = kLearningRateMeasured;
  return cfg;
}

std::string RunConfig::ratio() const {
  return std::to_string(iters_warm) + ":" + std::to_string(iters_first) + ":" +
         std::to_string(iters_next);
}

void RunConfig::validate() const {
  if (iters_warm < 0 || iters_first < 0 || iters_next < 0) {
    throw InvalidArgument("iteration budgets must be non-negative");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be positive");
  }
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw InvalidArgument("optimizer betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw InvalidArgument("optimizer epsilon must be positive");
  if (tv_weights.lambda_tv < 0.0 || tv_weights.lambda_s < 0.0 || tv_weights.lambda_t < 0.0) {
    throw InvalidArgument("TV weights must be non-negative");
  }
  if (!(tv_weights.epsilon > 0.0)) throw InvalidArgument("TV epsilon must be positive");
  if (record_every < 1) throw InvalidArgument("record_every must be >= 1");
  if (!(output_map.hi > output_map.lo)) throw InvalidArgument("output map needs lo < hi");
  if (warm_start_frame < 1) throw InvalidArgument("warm_start_frame is 1-based");
  network.validate();
}

AblationFlag ablation_flag_from_string(const std::string& name) {
  if (name == "upws") return AblationFlag::upws;
  if (name == "tpp") return AblationFlag::tpp;
  throw InvalidArgument("unknown ablation '" + name + "' (expected upws or tpp)");
}

RunConfig ablation_mode(const RunConfig& cfg, const std::set<AblationFlag>& disable) {
  RunConfig out = cfg;
  if (disable.contains(AblationFlag::upws)) {
    out.use_upws = false;
    out.iters_first = cfg.iters_warm;
  }
  if (disable.contains(AblationFlag::tpp)) {
    out.use_tpp = false;
    out.iters_next = out.iters_first;
  }
  return out;
}

std::optional<int> iterations_to_threshold(const LossTrace& trace, double threshold) {
  for (const auto& r : trace.records) {
    if (r.data <= threshold) return r.iteration;
  }
  return std::nullopt;
}

LossValue loss(const FastResUNet& net, const ParameterState& theta, const NoiseInput& z,
               const SensitivityMatrix& J, std::span<const double> dv,
               const FrameHistory& history, const RunConfig& cfg) {
  const LossValue v = evaluate(net, theta, z, J, dv, history, cfg, nullptr).value;
  if (!finite(v)) throw NumericalError("non-finite loss", "loss");
  return v;
}

LossValue loss_and_gradient(const FastResUNet& net, const ParameterState& theta,
                            const NoiseInput& z, const SensitivityMatrix& J,
                            std::span<const double> dv, const FrameHistory& history,
                            const RunConfig& cfg, ParameterGradients& grads) {
  if (grads.size() != theta.tensors.size()) {
    throw InvalidArgument("gradient buffers do not match the parameter state");
  }
  const LossValue v = evaluate(net, theta, z, J, dv, history, cfg, &grads).value;
  if (!finite(v)) throw NumericalError("non-finite loss", "loss");
  return v;
}

LossValue loss_of_volume(const Volume& x, const SensitivityMatrix& J, std::span<const double> dv,
                         const FrameHistory& history, const RunConfig& cfg) {
  check_frame_inputs(J, dv, x.size());
  const LossValue v = volume_loss(x, J, dv, history, cfg, {});
  if (!finite(v)) throw NumericalError("non-finite loss", "loss");
  return v;
}

Adam::Adam(const ParameterState& theta, double lr, std::array<double, 2> betas, double epsilon)
    : lr_(lr),
      b1_(betas[0]),
      b2_(betas[1]),
      eps_(epsilon),
      m_(zero_gradients(theta)),
      v_(zero_gradients(theta)) {}

void Adam::step(ParameterState& theta, const ParameterGradients& grads) {
  if (grads.size() != m_.size()) throw InvalidArgument("gradient count does not match optimizer");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    auto& p = theta.tensors[i].values;
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

FrameResult reconstruct_frame(const FastResUNet& net, const ParameterState& theta_init,
                              const NoiseInput& z, const SensitivityMatrix& J,
                              std::span<const double> dv, const FrameHistory& history, int iters,
                              const RunConfig& cfg, int frame, const IterationObserver& observer) {
  if (iters < 0) throw InvalidArgument("iteration budget must be non-negative");
  net.check(theta_init);
  const std::string stage = frame == 0 ? "upws" : "frame";

  FrameResult result;
  result.theta = theta_init;
  result.theta.iteration = 0;
  result.trace.stage = stage;
  result.trace.frame = frame;
  Adam adam(theta_init, cfg.learning_rate, cfg.betas, cfg.adam_epsilon);
  const auto start = Clock::now();

  for (int k = 0;; ++k) {
    const bool step = k < iters;
    ParameterGradients grads;
    if (step) grads = zero_gradients(result.theta);
    Evaluation e = evaluate(net, result.theta, z, J, dv, history, cfg, step ? &grads : nullptr);
    if (!finite(e.value)) throw NumericalError("non-finite loss", stage, k, frame);

    const LossRecord rec{frame, k, e.value.data, e.value.reg, e.value.total,
                         seconds_since(start)};
    if (k % cfg.record_every == 0 || !step) result.trace.records.push_back(rec);
    const bool keep_going = !observer || observer(rec);
    if (!step || !keep_going) {
      if (step && (result.trace.records.empty() || result.trace.records.back().iteration != k)) {
        result.trace.records.push_back(rec);
      }
      result.volume = std::move(e.x);
      break;
    }

    adam.step(result.theta, grads);
    result.theta.iteration = k + 1;
    if (!result.theta.all_finite()) {
      throw NumericalError("non-finite network parameter", stage, k + 1, frame);
    }
  }
  return result;
}

FrameResult upws_pretrain(const FastResUNet& net, const NoiseInput& z, const SensitivityMatrix& J,
                          std::span<const double> dv0, const RunConfig& cfg,
                          const IterationObserver& observer) {
  NetworkConfig ncfg = net.config();
  ncfg.seed = cfg.seed;
  const ParameterState init = init_parameters(ncfg);
  FrameResult r = reconstruct_frame(net, init, z, J, dv0, FrameHistory{}, cfg.iters_warm, cfg, 0,
                                    observer);
  r.theta.provenance = Provenance::upws;
  return r;
}

ReconstructionResult reconstruct_sequence(const GridGeometry& grid, const SensitivityMatrix& J,
                                          const VoltageSequence& V, const RunConfig& cfg,
                                          std::optional<std::span<const double>> warm_start,
                                          const IterationObserver& observer) {
  cfg.validate();
  validate(V);
  if (V.frames.empty()) throw InvalidArgument("voltage sequence is empty");
  check_frame_inputs(J, V.frames.front().values, grid.voxel_count());
  std::span<const double> dv0;
  if (warm_start) {
    dv0 = *warm_start;
    check_frame_inputs(J, dv0, grid.voxel_count());
  } else {
    if (cfg.warm_start_frame > static_cast<int>(V.frame_count())) {
      throw InvalidArgument("warm_start_frame " + std::to_string(cfg.warm_start_frame) +
                            " exceeds the sequence length " + std::to_string(V.frame_count()));
    }
    dv0 = V.frames[cfg.warm_start_frame - 1].values;
  }

  NetworkConfig ncfg = cfg.network;
  ncfg.seed = cfg.seed;
  const FastResUNet net(ncfg, grid);
  const NoiseInput z = sample_noise_input(grid, cfg.noise_seed());

  ReconstructionResult result;
  result.noise_seed = z.seed;
  result.noise_checksum = z.checksum();
  result.sequence.grid_ref = grid.fingerprint();
  result.sequence.reference_mode = V.reference_mode;
  result.sequence.source = "d2ip";

  // Records seen so far in the running stage, so a failing stage keeps its trace.
  LossTrace partial;
  const IterationObserver track = [&](const LossRecord& rec) {
    if (rec.iteration % cfg.record_every == 0) partial.records.push_back(rec);
    return !observer || observer(rec);
  };
  auto begin_stage = [&](const std::string& stage, int frame) {
    partial = LossTrace{stage, frame, {}};
  };

  int frame = 0;
  try {
    ParameterState start;
    if (cfg.use_upws) {
      begin_stage("upws", 0);
      const auto t0 = Clock::now();
      const std::uint64_t init_sum = init_parameters(ncfg).checksum();
      FrameResult warm = upws_pretrain(net, z, J, dv0, cfg, track);
      result.warm_start_seconds = seconds_since(t0);
      result.stages.push_back({"upws", 0, Provenance::kaiming_init, warm.theta.iteration, init_sum,
                               warm.theta.checksum(), z.checksum(), result.warm_start_seconds,
                               warm.theta});
      result.traces.push_back(std::move(warm.trace));
      start = std::move(warm.theta);
    } else {
      start = init_parameters(ncfg);
    }

    FrameHistory history;
    ParameterState theta = start;
    for (frame = 1; frame <= static_cast<int>(V.frame_count()); ++frame) {
      if (frame > 1) {
        if (cfg.use_tpp) {
          theta = result.stages.back().final_state;
          theta.provenance = Provenance::tpp;
        } else {
          theta = start;
        }
      }
      const int iters = frame == 1 ? cfg.iters_first : cfg.iters_next;
      begin_stage("frame", frame);
      const auto t0 = Clock::now();
      const std::uint64_t init_sum = theta.checksum();
      FrameResult fr = reconstruct_frame(net, theta, z, J, V.frames[frame - 1].values, history,
                                         iters, cfg, frame, track);
      const double secs = seconds_since(t0);
      result.frame_seconds.push_back(secs);
      result.stages.push_back({"frame", frame, theta.provenance, fr.theta.iteration, init_sum,
                               fr.theta.checksum(), z.checksum(), secs, fr.theta});
      result.traces.push_back(std::move(fr.trace));
      result.sequence.frames.push_back(vectorize(fr.volume, grid));
      history.append(std::move(fr.volume));
    }
  } catch (const NumericalError& e) {
    result.traces.push_back(std::move(partial));
    result.failure = RunFailure{frame, e.stage(), e.what()};
  }
  return result;
}

}  // namespace d2ip
