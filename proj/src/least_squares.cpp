#include "emlab/least_squares.hpp"

#include <algorithm>
#include <cmath>

namespace emlab {

double relative_gradient(const Eigen::MatrixXd& J, const Eigen::VectorXd& r) {
  const double rn = r.norm();
  if (rn == 0.0) return 0.0;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < J.cols(); ++j) {
    const double cn = J.col(j).norm();
    if (cn == 0.0) continue;
    worst = std::max(worst, std::abs(J.col(j).dot(r)) / (cn * rn));
  }
  return worst;
}

Eigen::MatrixXd normal_matrix_inverse(const Eigen::MatrixXd& J) {
  const Eigen::MatrixXd A = J.transpose() * J;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  return cod.pseudoInverse();
}

Eigen::MatrixXd numeric_jacobian(const LeastSquaresProblem& problem, const Eigen::VectorXd& x,
                                 double relative_step) {
  Eigen::MatrixXd J(problem.n_residuals, problem.n_params);
  Eigen::VectorXd rp(problem.n_residuals), rm(problem.n_residuals);
  for (Eigen::Index j = 0; j < problem.n_params; ++j) {
    const double h = relative_step * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    problem.residuals(xp, rp);
    problem.residuals(xm, rm);
    J.col(j) = (rp - rm) / (2.0 * h);
  }
  return J;
}

SolverReport levenberg_marquardt(const LeastSquaresProblem& problem, Eigen::VectorXd x0,
                                 const SolverOptions& options) {
  const Eigen::Index n = problem.n_params;
  const Eigen::Index m = problem.n_residuals;

  SolverReport rep;
  rep.x = std::move(x0);
  rep.residuals.resize(m);
  rep.jacobian.resize(m, n);
  problem.residuals(rep.x, rep.residuals);
  problem.jacobian(rep.x, rep.jacobian);
  rep.cost = 0.5 * rep.residuals.squaredNorm();

  Eigen::MatrixXd A = rep.jacobian.transpose() * rep.jacobian;
  Eigen::VectorXd g = rep.jacobian.transpose() * rep.residuals;
  // Residuals this far below the start are rounding noise; the relative
  // gradient carries no information there.
  const double noise_floor = 1e-20 * rep.cost;
  double mu = options.initial_damping;
  double nu = 2.0;

  Eigen::VectorXd trial_r(m);
  for (rep.iterations = 0; rep.iterations < options.max_iterations;) {
    rep.relative_gradient = relative_gradient(rep.jacobian, rep.residuals);
    if (rep.cost <= noise_floor || rep.relative_gradient <= options.gradient_tolerance) {
      rep.converged = true;
      break;
    }
    ++rep.iterations;

    Eigen::VectorXd scale = A.diagonal().cwiseMax(1e-12 * std::max(1.0, A.diagonal().maxCoeff()));
    Eigen::MatrixXd damped = A;
    damped.diagonal() += mu * scale;
    const Eigen::VectorXd step = damped.ldlt().solve(-g);
    if (!step.allFinite()) {
      mu *= nu;
      nu *= 2.0;
      continue;
    }

    const Eigen::VectorXd trial = rep.x + step;
    problem.residuals(trial, trial_r);
    const double trial_cost = trial_r.allFinite() ? 0.5 * trial_r.squaredNorm() : HUGE_VAL;
    // Gain ratio of actual to predicted reduction.
    const double predicted = 0.5 * step.dot(mu * scale.cwiseProduct(step) - g);
    const double rho = predicted > 0.0 ? (rep.cost - trial_cost) / predicted : -1.0;

    const bool small_step =
        step.norm() <= options.step_tolerance * (rep.x.norm() + options.step_tolerance);

    if (rho > 0.0) {
      rep.x = trial;
      rep.residuals = trial_r;
      rep.cost = trial_cost;
      problem.jacobian(rep.x, rep.jacobian);
      A = rep.jacobian.transpose() * rep.jacobian;
      g = rep.jacobian.transpose() * rep.residuals;
      mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      nu = 2.0;
      if (small_step) {
        rep.converged = true;
        break;
      }
    } else {
      if (small_step && mu > 1e10) {
        // No downhill step exists at this resolution.
        rep.converged = rep.cost <= noise_floor || relative_gradient(rep.jacobian, rep.residuals) < 1e-6;
        break;
      }
      mu *= nu;
      nu *= 2.0;
    }
  }
  rep.relative_gradient = relative_gradient(rep.jacobian, rep.residuals);
  return rep;
}

}  // namespace emlab
