#include "d2ip/baselines.hpp"

#include <cmath>
#include <string>

#include "d2ip/error.hpp"
#include "d2ip/regularizers.hpp"

namespace d2ip {

void TikhonovConfig::validate() const {
  if (!(mu >= 1e-6 && mu <= 1e2)) {
    throw InvalidArgument("Tikhonov mu must lie in [1e-6, 1e2], got " + std::to_string(mu));
  }
}

TikhonovSolver::TikhonovSolver(const SensitivityMatrix& J)
    : J_(&J), dual_(J.values.rows() < J.values.cols()) {
  if (dual_) {
    gram_ = J.values * J.values.transpose();
  } else {
    gram_ = J.values.transpose() * J.values;
  }
}

std::vector<double> TikhonovSolver::solve(std::span<const double> dv, double mu) const {
  if (!(mu > 0.0)) throw InvalidArgument("Tikhonov mu must be positive");
  if (dv.size() != J_->measurements()) {
    throw InvalidArgument("Tikhonov: measurement length does not match J");
  }
  const Eigen::Map<const Eigen::VectorXd> b(dv.data(), static_cast<Eigen::Index>(dv.size()));
  Eigen::MatrixXd system = gram_;
  system.diagonal().array() += mu;
  Eigen::LLT<Eigen::MatrixXd> llt(system);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Tikhonov normal equations are not positive definite", "tikhonov");
  }

  Eigen::VectorXd x;
  if (dual_) {
    x = J_->values.transpose() * llt.solve(b);
  } else {
    x = llt.solve(J_->values.transpose() * b);
  }
  if (!x.allFinite()) throw NumericalError("Tikhonov solution is not finite", "tikhonov");
  return {x.data(), x.data() + x.size()};
}

std::vector<double> tikhonov(const SensitivityMatrix& J, std::span<const double> dv,
                             const TikhonovConfig& cfg) {
  return TikhonovSolver(J).solve(dv, cfg.mu);
}

namespace {

struct TVObjective {
  const SensitivityMatrix& J;
  Eigen::Map<const Eigen::VectorXd> dv;
  const GridGeometry& grid;
  const TVConfig& cfg;

  double value(const Eigen::VectorXd& x) const {
    const double data = (J.values * x - dv).norm();
    const Volume vol = devectorize({x.data(), static_cast<std::size_t>(x.size())}, grid);
    return data + cfg.lambda_tv * spatial_tv(vol, cfg.epsilon);
  }

  double value_and_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    const Eigen::VectorXd residual = J.values * x - dv;
    const double data = residual.norm();
    if (data > 0.0) {
      grad.noalias() = J.values.transpose() * residual / data;
    } else {
      grad.setZero(x.size());
    }
    const Volume vol = devectorize({x.data(), static_cast<std::size_t>(x.size())}, grid);
    const double reg = spatial_tv(vol, cfg.epsilon, {grad.data(), static_cast<std::size_t>(grad.size())},
                                  cfg.lambda_tv);
    return data + cfg.lambda_tv * reg;
  }
};

}  // namespace

TVResult tv_reconstruct(const SensitivityMatrix& J, std::span<const double> dv,
                        const GridGeometry& grid, const TVConfig& cfg) {
  if (dv.size() != J.measurements()) throw InvalidArgument("TV: measurement length mismatch");
  if (J.voxels() != grid.voxel_count()) throw InvalidArgument("TV: J does not match the grid");
  if (cfg.iterations < 1) throw InvalidArgument("TV: iterations must be >= 1");
  if (!(cfg.step_size > 0.0) || !(cfg.lambda_tv >= 0.0)) {
    throw InvalidArgument("TV: step size must be positive and lambda non-negative");
  }

  const TVObjective objective{J, {dv.data(), static_cast<Eigen::Index>(dv.size())}, grid, cfg};
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.voxel_count()));
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd trial(x.size());

  constexpr double kArmijo = 1e-4;
  constexpr int kMaxHalvings = 60;

  TVResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  double step = cfg.step_size;
  for (int k = 0; k < cfg.iterations; ++k) {
    const double f = objective.value_and_gradient(x, grad);
    if (!std::isfinite(f)) throw NumericalError("TV loss is not finite", "tv", k);
    result.loss_trace.push_back(f);

    const double g2 = grad.squaredNorm();
    if (g2 == 0.0) continue;
    // Let the step recover after earlier backtracking.
    step = std::min(cfg.step_size, 2.0 * step);
    bool accepted = false;
    for (int h = 0; h < kMaxHalvings; ++h) {
      trial = x - step * grad;
      const double f_trial = objective.value(trial);
      if (std::isfinite(f_trial) && f_trial <= f - kArmijo * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (accepted) x.swap(trial);
  }

  result.x.assign(x.data(), x.data() + x.size());
  return result;
}

}  // namespace d2ip
