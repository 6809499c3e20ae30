#include "qhd/lm.hpp"

#include <cmath>

namespace qhd::fit {

LmResult levenberg_marquardt(const LmProblem& problem, Eigen::VectorXd start, int n_residuals,
                             const LmOptions& options) {
    const auto p = start.size();
    Eigen::VectorXd r(n_residuals);
    Eigen::MatrixXd j(n_residuals, p);
    Eigen::VectorXd r_try(n_residuals);
    Eigen::MatrixXd j_try(n_residuals, p);

    LmResult out;
    out.params = std::move(start);
    problem(out.params, r, j);
    out.sse = r.squaredNorm();
    if (!std::isfinite(out.sse)) {
        return out;
    }

    double lambda = options.initial_lambda;
    for (int it = 0; it < options.max_iterations; ++it) {
        out.iterations = it + 1;
        const Eigen::MatrixXd jtj = j.transpose() * j;
        const Eigen::VectorXd grad = j.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd a = jtj;
            // Marquardt scaling by the diagonal keeps the damping unit-free.
            for (Eigen::Index k = 0; k < p; ++k) {
                a(k, k) += lambda * std::max(jtj(k, k), 1e-300);
            }
            const Eigen::VectorXd step = a.ldlt().solve(-grad);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            const Eigen::VectorXd trial = out.params + step;
            problem(trial, r_try, j_try);
            const double sse_try = r_try.squaredNorm();
            if (std::isfinite(sse_try) && sse_try <= out.sse) {
                const double drop = out.sse - sse_try;
                const bool small_step =
                    step.norm() <= options.step_tolerance * (out.params.norm() + options.step_tolerance);
                out.params = trial;
                r.swap(r_try);
                j.swap(j_try);
                const double previous = out.sse;
                out.sse = sse_try;
                lambda = std::max(lambda / 10.0, 1e-15);
                improved = true;
                if (drop <= options.relative_tolerance * previous || small_step) {
                    out.converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e16) break;
        }
        if (!improved) {
            // No downhill step at any damping: a (numerical) minimum.
            out.converged = true;
        }
        if (out.converged) break;
    }
    out.jtj = j.transpose() * j;
    return out;
}

} // namespace qhd::fit
