#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "d2ip/forward.hpp"
#include "d2ip/phantom.hpp"
#include "d2ip/priornet.hpp"
#include "d2ip/regularizers.hpp"

namespace d2ip {

inline constexpr double kLearningRateSimulation = 5e-4;
inline constexpr double kLearningRateMeasured = 1e-4;

/// Affine map from the network's sigmoid output o in (0, 1) to a
/// conductivity change lo + (hi - lo) * o.
struct OutputMap {
  double lo = -0.16;
  double hi = 0.0;

  double slope() const noexcept { return hi - lo; }
  double apply(double o) const noexcept { return lo + (hi - lo) * o; }
};

struct RunConfig {
  int iters_warm = 1800;
  int iters_first = 450;
  int iters_next = 250;
  double learning_rate = kLearningRateSimulation;
  std::array<double, 2> betas{0.9, 0.999};
  double adam_epsilon = 1e-8;
  TVWeights tv_weights;
  NetworkConfig network;
  /// Seeds the parameter initialization and, through noise_seed(), Z.
  std::uint64_t seed = 0;
  /// Keep every record_every-th iteration in the loss traces.
  int record_every = 1;
  /// Use ||r||^2 instead of ||r|| as the data term.
  bool squared_data_term = false;
  OutputMap output_map;
  /// 1-based frame of the voltage sequence used for warm-start pretraining.
  int warm_start_frame = 1;
  bool use_upws = true;
  bool use_tpp = true;

  static RunConfig simulation() { return {}; }
  static RunConfig measured();

  /// "N0:N1:Ni", e.g. "1800:450:250".
  std::string ratio() const;
  std::uint64_t noise_seed() const noexcept { return seed ^ 0x9e3779b97f4a7c15ull; }
  void validate() const;
};

enum class AblationFlag { upws, tpp };

AblationFlag ablation_flag_from_string(const std::string& name);

/// Disabling upws starts frame 1 from a fresh initialization with the warm
/// budget N0. Disabling tpp restarts every later frame from frame 1's
/// starting point, with the budget that starting point gets for frame 1.
RunConfig ablation_mode(const RunConfig& cfg, const std::set<AblationFlag>& disable);

struct LossValue {
  double total = 0.0;
  double data = 0.0;
  double reg = 0.0;
};

struct LossRecord {
  int frame = 0;  // 0 for warm-start pretraining
  int iteration = 0;
  double data = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double seconds = 0.0;  // wall clock since the stage started
};

struct LossTrace {
  std::string stage;
  int frame = 0;
  std::vector<LossRecord> records;

  bool empty() const noexcept { return records.empty(); }
  const LossRecord& front() const { return records.front(); }
  const LossRecord& back() const { return records.back(); }
};

/// First recorded iteration whose data term is <= threshold.
std::optional<int> iterations_to_threshold(const LossTrace& trace, double threshold);

/// Loss of the mapped network output x = map(phi(theta | Z)):
/// data = ||dv - J x|| (squared when configured), reg = lambda_tv * tv4d(x).
LossValue loss(const FastResUNet& net, const ParameterState& theta, const NoiseInput& z,
               const SensitivityMatrix& J, std::span<const double> dv,
               const FrameHistory& history, const RunConfig& cfg);

/// loss() plus its gradient, accumulated into `grads` (one buffer per
/// parameter tensor, see zero_gradients()).
LossValue loss_and_gradient(const FastResUNet& net, const ParameterState& theta,
                            const NoiseInput& z, const SensitivityMatrix& J,
                            std::span<const double> dv, const FrameHistory& history,
                            const RunConfig& cfg, ParameterGradients& grads);

/// Same value from an already computed mapped volume.
LossValue loss_of_volume(const Volume& x, const SensitivityMatrix& J, std::span<const double> dv,
                         const FrameHistory& history, const RunConfig& cfg);

/// Adaptive-moment optimizer with constant step size and no weight decay.
class Adam {
 public:
  Adam(const ParameterState& theta, double lr, std::array<double, 2> betas, double epsilon);

  void step(ParameterState& theta, const ParameterGradients& grads);
  int steps() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  ParameterGradients m_, v_;
};

/// Called after each loss evaluation; returning false ends the stage early.
using IterationObserver = std::function<bool(const LossRecord&)>;

struct FrameResult {
  Volume volume;  // mapped output at the final iterate
  ParameterState theta;
  LossTrace trace;
};

/// Runs `iters` optimizer steps on one frame's objective from theta_init.
///
/// The trace holds the loss at iterations 0..iters (subsampled, the last one
/// always kept); the returned volume and theta are those of the last iterate.
/// Throws NumericalError on a non-finite loss or parameter.
FrameResult reconstruct_frame(const FastResUNet& net, const ParameterState& theta_init,
                              const NoiseInput& z, const SensitivityMatrix& J,
                              std::span<const double> dv, const FrameHistory& history, int iters,
                              const RunConfig& cfg, int frame = 1,
                              const IterationObserver& observer = {});

/// Warm-start pretraining: iters_warm steps on a single-frame objective with
/// empty history, starting from a fresh initialization.
FrameResult upws_pretrain(const FastResUNet& net, const NoiseInput& z, const SensitivityMatrix& J,
                          std::span<const double> dv0, const RunConfig& cfg,
                          const IterationObserver& observer = {});

/// Bookkeeping for one optimization stage of a sequence run.
struct StageRecord {
  std::string stage;  // "upws" or "frame"
  int frame = 0;
  Provenance start = Provenance::kaiming_init;
  int iterations = 0;
  std::uint64_t initial_checksum = 0;
  std::uint64_t final_checksum = 0;
  std::uint64_t noise_checksum = 0;
  double seconds = 0.0;
  ParameterState final_state;
};

struct RunFailure {
  int frame = 0;
  std::string stage;
  std::string message;
};

struct ReconstructionResult {
  ConductivitySequence sequence;
  std::vector<LossTrace> traces;
  std::vector<StageRecord> stages;
  /// Wall-clock seconds per frame, excluding warm-start pretraining.
  std::vector<double> frame_seconds;
  double warm_start_seconds = 0.0;
  std::uint64_t noise_seed = 0;
  std::uint64_t noise_checksum = 0;
  /// Set when a stage failed; everything before it is kept.
  std::optional<RunFailure> failure;

  bool ok() const noexcept { return !failure.has_value(); }
};

/// Full sequence run: one fixed Z, warm start, frame 1, then each later
/// frame from the previous frame's final parameters.
///
/// Numerical failures do not throw; they end the run and are reported in
/// `failure`. Invalid inputs throw InvalidArgument.
/// `warm_start` overrides the measurement used for pretraining.
ReconstructionResult reconstruct_sequence(const GridGeometry& grid, const SensitivityMatrix& J,
                                          const VoltageSequence& V, const RunConfig& cfg,
                                          std::optional<std::span<const double>> warm_start = {},
                                          const IterationObserver& observer = {});

}  // namespace d2ip
