#pragma once

// Levenberg-Marquardt for small dense least-squares problems with an
// analytic Jacobian.

#include <Eigen/Dense>

#include <functional>

namespace qhd::fit {

struct LmOptions {
    int max_iterations = 200;
    double relative_tolerance = 1e-12;  // on the sum of squares
    double step_tolerance = 1e-12;      // relative, on the parameters
    double initial_lambda = 1e-3;
};

struct LmResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd jtj;  // J^T J at the optimum
    double sse = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Fills the residual vector (size m) and Jacobian (m x p) at `params`.
using LmProblem = std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residual,
                                     Eigen::MatrixXd& jacobian)>;

LmResult levenberg_marquardt(const LmProblem& problem, Eigen::VectorXd start, int n_residuals,
                             const LmOptions& options = {});

} // namespace qhd::fit
