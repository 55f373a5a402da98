#pragma once

#include <functional>

#include <Eigen/Dense>

namespace emlab {

/// A dense nonlinear least-squares problem: minimise 0.5 * |r(x)|^2.
struct LeastSquaresProblem {
  Eigen::Index n_params = 0;
  Eigen::Index n_residuals = 0;
  std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r)> residuals;
  /// Analytic Jacobian dr/dx, n_residuals x n_params.
  std::function<void(const Eigen::VectorXd& x, Eigen::MatrixXd& J)> jacobian;
};

struct SolverOptions {
  double step_tolerance = 1e-8;  // relative parameter step
  int max_iterations = 200;
  double gradient_tolerance = 1e-12;  // relative gradient, see SolverReport
  double initial_damping = 1e-3;
};

struct SolverReport {
  Eigen::VectorXd x;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  double cost = 0.0;  // 0.5 * |r|^2
  int iterations = 0;
  bool converged = false;
  /// max_j |J_j . r| / (|J_j| |r|): the cosine between the residual and
  /// each Jacobian column; zero at a stationary point.
  double relative_gradient = 0.0;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling and Nielsen's
/// damping update. A cost 1e-20 below the starting cost counts as an exact
/// fit. Never throws on non-convergence; check the report.
SolverReport levenberg_marquardt(const LeastSquaresProblem& problem, Eigen::VectorXd x0,
                                 const SolverOptions& options = {});

double relative_gradient(const Eigen::MatrixXd& J, const Eigen::VectorXd& r);

/// (J^T J)^+ via a rank-revealing decomposition.
Eigen::MatrixXd normal_matrix_inverse(const Eigen::MatrixXd& J);

/// Central finite-difference Jacobian, for checking analytic ones.
Eigen::MatrixXd numeric_jacobian(const LeastSquaresProblem& problem, const Eigen::VectorXd& x,
                                 double relative_step = 1e-6);

}  // namespace emlab
