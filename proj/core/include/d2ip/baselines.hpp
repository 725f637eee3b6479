#pragma once

#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "d2ip/forward.hpp"
#include "d2ip/geometry.hpp"

namespace d2ip {

struct TikhonovConfig {
  double mu = 0.005;

  /// Guard range for configured runs: mu in [1e-6, 1e2].
  void validate() const;
};

/// Zeroth-order Tikhonov: argmin |Jx - dv|^2 + mu |x|^2.
///
/// The Gram matrix is formed once on the smaller side of J, so sweeping mu
/// only costs one Cholesky factorization per value. For M < Q the solution
/// is computed as J^T (J J^T + mu I)^{-1} dv, which equals
/// (J^T J + mu I)^{-1} J^T dv.
class TikhonovSolver {
 public:
  explicit TikhonovSolver(const SensitivityMatrix& J);

  std::vector<double> solve(std::span<const double> dv, double mu) const;

 private:
  const SensitivityMatrix* J_;
  Eigen::MatrixXd gram_;
  bool dual_;
};

std::vector<double> tikhonov(const SensitivityMatrix& J, std::span<const double> dv,
                             const TikhonovConfig& cfg);

struct TVConfig {
  double lambda_tv = 0.01;
  int iterations = 300;
  double step_size = 0.05;
  double epsilon = 1e-8;
};

struct TVResult {
  std::vector<double> x;
  std::vector<double> loss_trace;
};

/// Minimizes |Jx - dv|_2 + lambda * spatial_tv(x) from x = 0 by gradient
/// descent with Armijo backtracking (the trial step starts at step_size and
/// is halved until sufficient decrease). Returns the final iterate.
TVResult tv_reconstruct(const SensitivityMatrix& J, std::span<const double> dv,
                        const GridGeometry& grid, const TVConfig& cfg);

}  // namespace d2ip
