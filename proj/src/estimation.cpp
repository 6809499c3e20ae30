#include "qhd/estimation.hpp"

#include "qhd/error.hpp"
#include "qhd/lm.hpp"
#include "qhd/log.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace qhd::est {

namespace {

constexpr double sqrt_pi = 1.7724538509055159;

// Integral of exp(-((x - b) / c)^2) over [l, u] and its derivatives in b, c.
struct BinIntegral {
    double value;
    double d_b;
    double d_c;
};

BinIntegral gaussian_bin_integral(double l, double u, double b, double c) {
    const double zl = (l - b) / c;
    const double zu = (u - b) / c;
    // Difference of erf values taken in the tail that keeps precision.
    double diff;
    if (zl > 0.0) {
        diff = std::erfc(zl) - std::erfc(zu);
    } else if (zu < 0.0) {
        diff = std::erfc(-zu) - std::erfc(-zl);
    } else {
        diff = std::erf(zu) - std::erf(zl);
    }
    const double el = std::exp(-zl * zl);
    const double eu = std::exp(-zu * zu);
    const double value = 0.5 * sqrt_pi * c * diff;
    return {value, el - eu, value / c - (zu * eu - zl * el)};
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
    double m4 = 0.0;
};

Moments histogram_moments(const Histogram& h) {
    Moments m;
    double n = 0.0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        n += h.counts[i];
        m.mean += h.counts[i] * h.center(i);
    }
    m.mean /= n;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        const double d = h.center(i) - m.mean;
        m.var += h.counts[i] * d * d;
        m.m4 += h.counts[i] * d * d * d * d;
    }
    m.var /= n;
    m.m4 /= n;
    return m;
}

void check_fit_input(const Histogram& h, const FitOptions& options) {
    if (h.total < options.min_samples) {
        throw InsufficientDataError("Gaussian fit needs at least " + std::to_string(options.min_samples) +
                                    " samples, got " + std::to_string(h.total));
    }
    if (!(h.width > 0.0) || h.occupied() < options.min_occupied_bins) {
        throw FitError("degenerate histogram: " + std::to_string(h.occupied()) +
                       " occupied bins, need " + std::to_string(options.min_occupied_bins));
    }
}

// Least squares of sum_k a_k/h * I(bin; b_k, c) against the counts.
// Parameters: (a1, b1, c) or (a1, a2, b1, b2, c).
struct MixtureProblem {
    const Histogram& h;
    bool two;
    bool poisson;

    void operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& j) const {
        const double c = two ? p[4] : p[2];
        if (!(c > 0.0)) {
            r.setConstant(std::numeric_limits<double>::quiet_NaN());
            return;
        }
        const double inv_w = 1.0 / h.width;
        for (std::size_t i = 0; i < h.counts.size(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const double l = h.lo + static_cast<double>(i) * h.width;
            const double u = l + h.width;
            const double weight = poisson ? 1.0 / std::sqrt(std::max(h.counts[i], 1.0)) : 1.0;
            if (two) {
                const auto g1 = gaussian_bin_integral(l, u, p[2], c);
                const auto g2 = gaussian_bin_integral(l, u, p[3], c);
                const double model = (p[0] * g1.value + p[1] * g2.value) * inv_w;
                r[row] = weight * (model - h.counts[i]);
                j(row, 0) = weight * g1.value * inv_w;
                j(row, 1) = weight * g2.value * inv_w;
                j(row, 2) = weight * p[0] * g1.d_b * inv_w;
                j(row, 3) = weight * p[1] * g2.d_b * inv_w;
                j(row, 4) = weight * (p[0] * g1.d_c + p[1] * g2.d_c) * inv_w;
            } else {
                const auto g = gaussian_bin_integral(l, u, p[1], c);
                r[row] = weight * (p[0] * g.value * inv_w - h.counts[i]);
                j(row, 0) = weight * g.value * inv_w;
                j(row, 1) = weight * p[0] * g.d_b * inv_w;
                j(row, 2) = weight * p[0] * g.d_c * inv_w;
            }
        }
    }
};

double r_squared(const Histogram& h, const Eigen::VectorXd& p, bool two) {
    MixtureProblem unweighted{h, two, false};
    const auto m = static_cast<Eigen::Index>(h.counts.size());
    Eigen::VectorXd r(m);
    Eigen::MatrixXd j(m, p.size());
    unweighted(p, r, j);
    const double mean = static_cast<double>(h.total) / static_cast<double>(h.counts.size());
    double ss_tot = 0.0;
    for (double c : h.counts) ss_tot += (c - mean) * (c - mean);
    return ss_tot > 0.0 ? 1.0 - r.squaredNorm() / ss_tot : 0.0;
}

double problem_sse(const Histogram& h, const Eigen::VectorXd& p, bool two, bool poisson) {
    MixtureProblem problem{h, two, poisson};
    const auto m = static_cast<Eigen::Index>(h.counts.size());
    Eigen::VectorXd r(m);
    Eigen::MatrixXd j(m, p.size());
    problem(p, r, j);
    return r.squaredNorm();
}

// 95 % half-widths from the linearised covariance at the optimum. Weighted
// fits use s^2 (J^T J)^-1. Unweighted fits of counts are heteroscedastic
// (variance ~ model), so they get the sandwich B J^T diag(phi mu) J B with
// B = (J^T J)^-1 and phi the Pearson dispersion.
Eigen::VectorXd confidence_half_widths(const fit::LmResult& fit, const Histogram& h, bool two, bool poisson) {
    const auto p = fit.params.size();
    const auto m = static_cast<Eigen::Index>(h.counts.size());
    const double dof = static_cast<double>(m) - static_cast<double>(p);
    Eigen::VectorXd out = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
    if (dof < 1.0) return out;
    const Eigen::MatrixXd bread = fit.jtj.completeOrthogonalDecomposition().pseudoInverse();
    Eigen::MatrixXd cov;
    if (poisson) {
        cov = (fit.sse / dof) * bread;
    } else {
        Eigen::VectorXd r(m);
        Eigen::MatrixXd j(m, p);
        MixtureProblem{h, two, false}(fit.params, r, j);
        Eigen::VectorXd mu(m);
        double pearson = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            mu[i] = std::max(r[i] + h.counts[static_cast<std::size_t>(i)], 1.0);
            pearson += r[i] * r[i] / mu[i];
        }
        const double phi = pearson / dof;
        const Eigen::MatrixXd meat = j.transpose() * (phi * mu).asDiagonal() * j;
        cov = bread * meat * bread;
    }
    const double t = t_quantile_95(dof);
    for (Eigen::Index k = 0; k < p; ++k) {
        out[k] = t * std::sqrt(std::max(cov(k, k), 0.0));
    }
    return out;
}

} // namespace

std::size_t Histogram::occupied() const {
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }));
}

Histogram make_histogram(std::span<const float> samples, std::size_t min_bins) {
    Histogram h;
    h.total = samples.size();
    if (samples.empty()) {
        return h;
    }
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *mn;
    const double hi = *mx;
    const double range = hi - lo;
    if (!(range > 0.0)) {
        h.lo = lo - 0.5;
        h.width = 0.0;
        h.counts.assign(1, static_cast<double>(samples.size()));
        return h;
    }
    std::vector<float> sorted(samples.begin(), samples.end());
    const auto q = [&](double frac) {
        const auto k = static_cast<std::size_t>(frac * static_cast<double>(sorted.size() - 1));
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
        return static_cast<double>(sorted[k]);
    };
    const double iqr = q(0.75) - q(0.25);
    std::size_t n_bins = min_bins;
    if (iqr > 0.0) {
        const double fd = 2.0 * iqr / std::cbrt(static_cast<double>(samples.size()));
        n_bins = std::max<std::size_t>(min_bins, static_cast<std::size_t>(std::ceil(range / fd)));
    }
    n_bins = std::min<std::size_t>(n_bins, 1u << 20);
    // Grid centred on the data mid-range, so negating the data mirrors it.
    h.width = range / static_cast<double>(n_bins) * (1.0 + 1e-9);
    h.lo = 0.5 * (lo + hi) - 0.5 * h.width * static_cast<double>(n_bins);
    h.counts.assign(n_bins, 0.0);
    for (float v : samples) {
        auto i = static_cast<std::int64_t>(std::floor((v - h.lo) / h.width));
        i = std::clamp<std::int64_t>(i, 0, static_cast<std::int64_t>(n_bins) - 1);
        h.counts[static_cast<std::size_t>(i)] += 1.0;
    }
    return h;
}

double GaussianFitResult::variance_lo() const {
    const double lo = std::max(c - ci_c, 0.0);
    return 0.5 * lo * lo;
}

double GaussianFitResult::variance_hi() const { return 0.5 * (c + ci_c) * (c + ci_c); }

GaussianFitResult fit_single_gaussian(const Histogram& h, const FitOptions& options) {
    check_fit_input(h, options);
    const auto mom = histogram_moments(h);
    const double c0 = std::sqrt(2.0 * std::max(mom.var, h.width * h.width));
    Eigen::VectorXd start(3);
    start << static_cast<double>(h.total) * h.width / (c0 * sqrt_pi), mom.mean, c0;

    fit::LmOptions lm;
    lm.max_iterations = options.max_iterations;
    const auto res = fit::levenberg_marquardt(MixtureProblem{h, false, options.poisson_weights}, start,
                                              static_cast<int>(h.counts.size()), lm);
    if (!res.converged || !res.params.allFinite() || !(res.params[2] > 0.0)) {
        throw FitError("single Gaussian fit did not converge after " + std::to_string(res.iterations) +
                       " iterations (sse " + std::to_string(res.sse) + ")");
    }
    const auto ci = confidence_half_widths(res, h, false, options.poisson_weights);
    GaussianFitResult out;
    out.a1 = res.params[0];
    out.b1 = res.params[1];
    out.c = res.params[2];
    out.ci_a1 = ci[0];
    out.ci_b1 = ci[1];
    out.ci_c = ci[2];
    out.r_squared = r_squared(h, res.params, false);
    out.iterations = res.iterations;
    return out;
}

GaussianFitResult fit_single_gaussian(std::span<const float> samples, const FitOptions& options) {
    return fit_single_gaussian(make_histogram(samples, options.min_histogram_bins), options);
}

GaussianFitResult fit_double_gaussian(const Histogram& h, const FitOptions& options) {
    check_fit_input(h, options);
    const auto mom = histogram_moments(h);
    const double s = std::sqrt(mom.var);

    // Starts: the symmetric-mixture moment split 2 mu^4 = 3 s^4 - m4, and
    // two fixed fractions of the spread.
    std::vector<double> mus;
    const double split = 0.5 * (3.0 * mom.var * mom.var - mom.m4);
    if (split > 0.0) mus.push_back(std::sqrt(std::sqrt(split)));
    mus.push_back(0.5 * s);
    mus.push_back(0.9 * s);

    fit::LmOptions lm;
    lm.max_iterations = options.max_iterations;
    const MixtureProblem problem{h, true, options.poisson_weights};
    std::optional<fit::LmResult> best;
    for (double mu : mus) {
        const double var = std::max(mom.var - mu * mu, 0.05 * mom.var);
        const double c0 = std::sqrt(2.0 * std::max(var, h.width * h.width));
        const double a0 = 0.5 * static_cast<double>(h.total) * h.width / (c0 * sqrt_pi);
        Eigen::VectorXd start(5);
        start << a0, a0, mom.mean - mu, mom.mean + mu, c0;
        auto res = fit::levenberg_marquardt(problem, start, static_cast<int>(h.counts.size()), lm);
        if (!res.converged || !res.params.allFinite() || !(res.params[4] > 0.0)) continue;
        if (!best || res.sse < best->sse) best = std::move(res);
    }

    // The shared-width mixture has a flat direction when the data are one
    // Gaussian, so an unresolved split is replaced by the single fit unless
    // the two extra parameters buy a significant drop in residuals. The split
    // is unidentified under the null, which fattens the tail of F well past
    // the textbook distribution; hence the very small test level.
    std::optional<GaussianFitResult> single;
    double single_sse = 0.0;
    try {
        single = fit_single_gaussian(h, options);
        Eigen::VectorXd sp(3);
        sp << single->a1, single->b1, single->c;
        single_sse = problem_sse(h, sp, false, options.poisson_weights);
    } catch (const FitError&) {
    }
    const std::size_t m = h.counts.size();
    const bool resolved = [&] {
        if (!best) return false;
        if (!single) return true;
        if (m <= 5 || !(best->sse > 0.0)) return true;
        const double f = ((single_sse - best->sse) / 2.0) / (best->sse / static_cast<double>(m - 5));
        log::debug("mixture F = {:.3f} on (2, {})", f, m - 5);
        if (!(f > 0.0)) return false;
        const double crit = boost::math::quantile(boost::math::fisher_f(2.0, static_cast<double>(m - 5)), 1.0 - 1e-4);
        return f > crit;
    }();
    if (!resolved && single) {
        GaussianFitResult out = *single;
        out.two_component = true;
        out.collapsed = true;
        out.b2 = out.b1;
        out.ci_b2 = out.ci_b1;
        return out;
    }
    if (!best) {
        throw FitError("double Gaussian fit did not converge from any of " + std::to_string(mus.size()) +
                       " starts");
    }
    const auto ci = confidence_half_widths(*best, h, true, options.poisson_weights);
    const auto& p = best->params;
    GaussianFitResult out;
    out.two_component = true;
    out.a1 = p[0];
    out.a2 = p[1];
    out.b1 = p[2];
    out.b2 = p[3];
    out.c = p[4];
    out.ci_a1 = ci[0];
    out.ci_a2 = ci[1];
    out.ci_b1 = ci[2];
    out.ci_b2 = ci[3];
    out.ci_c = ci[4];
    if (out.b1 > out.b2) {
        std::swap(out.a1, out.a2);
        std::swap(out.b1, out.b2);
        std::swap(out.ci_a1, out.ci_a2);
        std::swap(out.ci_b1, out.ci_b2);
    }
    out.collapsed = std::abs(out.b2 - out.b1) < out.c / 10.0;
    out.r_squared = r_squared(h, p, true);
    out.iterations = best->iterations;
    return out;
}

GaussianFitResult fit_double_gaussian(std::span<const float> samples, const FitOptions& options) {
    return fit_double_gaussian(make_histogram(samples, options.min_histogram_bins), options);
}

std::vector<AmplitudeBin> superimpose_and_bin(std::span<const float> symbols, std::int64_t period_symbols,
                                              int n_bins, double origin) {
    if (period_symbols < 2 || period_symbols % 2 != 0) {
        throw DomainError("AM period must be a positive even number of symbols");
    }
    if (n_bins < 1 || n_bins > period_symbols / 2) {
        throw DomainError("bin count must lie in [1, period/2]");
    }
    const auto n = static_cast<std::int64_t>(symbols.size());
    if (n < 2 * period_symbols) {
        throw InsufficientDataError("folding needs at least two AM periods of symbols");
    }
    const std::int64_t half = period_symbols / 2;
    const std::int64_t shift = static_cast<std::int64_t>(std::llround(origin));
    const std::int64_t used = (n / period_symbols) * period_symbols;

    std::vector<AmplitudeBin> bins(static_cast<std::size_t>(n_bins));
    const double step = std::numbers::pi / n_bins;
    for (int b = 0; b < n_bins; ++b) {
        auto& bin = bins[static_cast<std::size_t>(b)];
        bin.index = b;
        bin.phase_lo = b * step;
        bin.phase_hi = (b + 1) * step;
        bin.samples.reserve(static_cast<std::size_t>(used / n_bins + 1));
    }
    for (std::int64_t k = 0; k < used; ++k) {
        std::int64_t p = (k - shift) % period_symbols;
        if (p < 0) p += period_symbols;
        const std::int64_t folded = p < half ? p : period_symbols - 1 - p;
        const auto b = static_cast<std::size_t>(folded * n_bins / half);
        bins[b].samples.push_back(symbols[static_cast<std::size_t>(k)]);
    }
    return bins;
}

std::int64_t estimate_envelope_origin(std::span<const float> symbols, std::int64_t period_symbols) {
    if (period_symbols < 4 || period_symbols % 2 != 0) {
        throw DomainError("AM period must be an even number of symbols >= 4");
    }
    const auto n = static_cast<std::int64_t>(symbols.size());
    const std::int64_t periods = n / period_symbols;
    if (periods < 1) {
        throw InsufficientDataError("envelope origin needs at least one AM period");
    }
    std::vector<double> power(static_cast<std::size_t>(period_symbols), 0.0);
    for (std::int64_t k = 0; k < periods * period_symbols; ++k) {
        const double v = symbols[static_cast<std::size_t>(k)];
        power[static_cast<std::size_t>(k % period_symbols)] += v * v;
    }
    const double two_pi_over_t = 2.0 * std::numbers::pi / static_cast<double>(period_symbols);
    std::int64_t best = 0;
    double best_sse = std::numeric_limits<double>::infinity();
    const double m = static_cast<double>(period_symbols);
    for (std::int64_t s = 0; s < period_symbols / 2; ++s) {
        double sg = 0.0, sgg = 0.0, sy = 0.0, sgy = 0.0, syy = 0.0;
        for (std::int64_t p = 0; p < period_symbols; ++p) {
            const double g = std::pow(std::sin(two_pi_over_t * (static_cast<double>(p - s) + 0.5)), 2);
            const double y = power[static_cast<std::size_t>(p)];
            sg += g;
            sgg += g * g;
            sy += y;
            sgy += g * y;
            syy += y * y;
        }
        const double det = m * sgg - sg * sg;
        if (!(det > 0.0)) continue;
        const double a = (m * sgy - sg * sy) / det;
        const double c = (sy - a * sg) / m;
        const double sse = syy - a * sgy - c * sy;
        if (a > 0.0 && sse < best_sse) {
            best_sse = sse;
            best = s;
        }
    }
    return best;
}

CornerResult worst_case_error(double vs_lo, double vs_hi, double vv_lo, double vv_hi, double vd_lo,
                              double vd_hi) {
    for (double v : {vs_lo, vs_hi, vv_lo, vv_hi, vd_lo, vd_hi}) {
        if (!std::isfinite(v)) throw DomainError("variance interval bounds must be finite");
    }
    CornerResult out;
    out.min = std::numeric_limits<double>::infinity();
    out.max = -std::numeric_limits<double>::infinity();
    for (double vs : {vs_lo, vs_hi}) {
        for (double vv : {vv_lo, vv_hi}) {
            for (double vd : {vd_lo, vd_hi}) {
                if (!(vv > vd)) {
                    ++out.excluded;
                    continue;
                }
                const double e = (vs - vd) / (vv - vd) - 1.0;
                out.min = std::min(out.min, e);
                out.max = std::max(out.max, e);
            }
        }
    }
    if (out.excluded == 8) {
        throw CalibrationError("every corner of the calibration intervals has vacuum <= dark");
    }
    out.half_width = 0.5 * (out.max - out.min);
    return out;
}

BinResult estimate_bin(const GaussianFitResult& signal, const GaussianFitResult& vacuum,
                       const GaussianFitResult& dark, const EstimateOptions& options) {
    options.convention.validate();
    const double vv = vacuum.variance();
    const double vd = dark.variance();
    if (!(vv > vd)) {
        throw CalibrationError("vacuum variance does not exceed dark variance (clearance <= 0 dB)");
    }
    BinResult out;
    out.fit = signal;
    out.r_squared = signal.r_squared;
    out.collapsed = signal.collapsed;

    const double e = excess_noise_from_variances(signal.variance(), vv, vd);
    const auto corners = worst_case_error(signal.variance_lo(), signal.variance_hi(), vacuum.variance_lo(),
                                          vacuum.variance_hi(), dark.variance_lo(), dark.variance_hi());
    out.excess_noise = ExcessNoise(std::max(e, -1.0), corners.half_width);
    out.excluded_corners = corners.excluded;

    const double kappa = options.convention.kappa;
    const auto alpha_of = [&](double b1, double b2, double v, double d) {
        return (b2 - b1) / (2.0 * kappa * std::sqrt(v - d));
    };
    if (signal.two_component) {
        out.alpha = alpha_of(signal.b1, signal.b2, vv, vd);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (double b1 : {signal.b1 - signal.ci_b1, signal.b1 + signal.ci_b1}) {
            for (double b2 : {signal.b2 - signal.ci_b2, signal.b2 + signal.ci_b2}) {
                for (double v : {vacuum.variance_lo(), vacuum.variance_hi()}) {
                    for (double d : {dark.variance_lo(), dark.variance_hi()}) {
                        if (!(v > d)) continue;
                        const double a = alpha_of(b1, b2, v, d);
                        lo = std::min(lo, a);
                        hi = std::max(hi, a);
                    }
                }
            }
        }
        out.alpha_fit_error = std::isfinite(lo) ? 0.5 * (hi - lo) : 0.0;
    }
    out.alpha_error = out.alpha_fit_error;
    return out;
}

BinningError binning_error(std::span<const double> alphas, const std::vector<bool>& selected) {
    if (alphas.size() != selected.size()) {
        throw DomainError("alpha and selection vectors differ in length");
    }
    const std::size_t n = alphas.size();
    BinningError out;
    out.half_width.assign(n, 0.0);
    if (n == 0) return out;
    const double step = std::numbers::pi / static_cast<double>(n);

    std::vector<double> phi, y;
    for (std::size_t b = 0; b < n; ++b) {
        if (selected[b]) {
            phi.push_back((static_cast<double>(b) + 0.5) * step);
            y.push_back(alphas[b]);
        }
    }

    const auto neighbour_fallback = [&]() {
        out.fallback = true;
        for (std::size_t b = 0; b < n; ++b) {
            if (n == 1) break;
            if (b == 0) {
                out.half_width[b] = 0.5 * std::abs(alphas[1] - alphas[0]);
            } else if (b + 1 == n) {
                out.half_width[b] = 0.5 * std::abs(alphas[b] - alphas[b - 1]);
            } else {
                out.half_width[b] = 0.25 * std::abs(alphas[b + 1] - alphas[b - 1]);
            }
        }
        return out;
    };
    if (phi.size() < 10) {
        log::warn("binning error: {} selected bins, need 10 for the sinusoid fit", phi.size());
        return neighbour_fallback();
    }

    // Model C + A |sin(phi + phi0)|; C = 0 for a fully modulated envelope.
    const auto m = static_cast<int>(phi.size());
    const fit::LmProblem problem = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
        for (int i = 0; i < m; ++i) {
            const double s = std::sin(phi[static_cast<std::size_t>(i)] + p[1]);
            const double sign = s < 0.0 ? -1.0 : 1.0;
            r[i] = p[2] + p[0] * std::abs(s) - y[static_cast<std::size_t>(i)];
            j(i, 0) = std::abs(s);
            j(i, 1) = p[0] * sign * std::cos(phi[static_cast<std::size_t>(i)] + p[1]);
            j(i, 2) = 1.0;
        }
    };
    // Phase grid with (A, C) solved linearly gives the start.
    Eigen::Vector3d start(0.0, 0.0, 0.0);
    double best = std::numeric_limits<double>::infinity();
    for (int g = -90; g <= 90; ++g) {
        const double p0 = g * std::numbers::pi / 180.0;
        Eigen::MatrixXd a(m, 2);
        Eigen::VectorXd rhs(m);
        for (int i = 0; i < m; ++i) {
            a(i, 0) = std::abs(std::sin(phi[static_cast<std::size_t>(i)] + p0));
            a(i, 1) = 1.0;
            rhs[i] = y[static_cast<std::size_t>(i)];
        }
        const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(rhs);
        const double sse = (a * coef - rhs).squaredNorm();
        if (sse < best) {
            best = sse;
            start = Eigen::Vector3d(coef[0], p0, coef[1]);
        }
    }
    const auto res = fit::levenberg_marquardt(problem, start, m);
    if (!res.converged || !res.params.allFinite()) {
        log::warn("binning error: sinusoid fit did not converge; using neighbour differences");
        return neighbour_fallback();
    }
    out.amplitude = res.params[0];
    out.phase = res.params[1];
    constexpr int probes = 64;
    for (std::size_t b = 0; b < n; ++b) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (int k = 0; k <= probes; ++k) {
            const double ph = (static_cast<double>(b) + static_cast<double>(k) / probes) * step;
            const double v = out.amplitude * std::abs(std::sin(ph + out.phase));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        out.half_width[b] = 0.5 * (hi - lo);
    }
    return out;
}

LinearityReport detector_linearity(std::span<const SweepPoint> points) {
    std::vector<double> powers;
    for (const auto& p : points) powers.push_back(p.lo_power_mw);
    std::sort(powers.begin(), powers.end());
    const auto distinct = std::unique(powers.begin(), powers.end()) - powers.begin();
    if (distinct < 3) {
        throw InsufficientDataError("linearity check needs at least 3 distinct LO powers");
    }
    const auto n = static_cast<double>(points.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, dark = 0.0, ymax = -std::numeric_limits<double>::infinity();
    for (const auto& p : points) {
        if (!std::isfinite(p.lo_power_mw) || !std::isfinite(p.noise_variance) || !(p.dark_variance > 0.0)) {
            throw DomainError("sweep points need finite values and positive dark variance");
        }
        const double y = p.noise_variance - p.dark_variance;
        sx += p.lo_power_mw;
        sy += y;
        sxx += p.lo_power_mw * p.lo_power_mw;
        sxy += p.lo_power_mw * y;
        dark += p.dark_variance;
        ymax = std::max(ymax, y);
    }
    dark /= n;
    LinearityReport out;
    const double sxx_c = sxx - sx * sx / n;
    out.slope = (sxy - sx * sy / n) / sxx_c;
    out.intercept = (sy - out.slope * sx) / n;

    double sse = 0.0;
    out.max_relative_residual = 0.0;
    for (const auto& p : points) {
        const double y = p.noise_variance - p.dark_variance;
        const double r = y - (out.slope * p.lo_power_mw + out.intercept);
        out.residuals.push_back(r);
        const double rel = y != 0.0 ? r / y : std::numeric_limits<double>::infinity();
        out.relative_residuals.push_back(rel);
        out.max_relative_residual = std::max(out.max_relative_residual, std::abs(rel));
        sse += r * r;
    }
    const double dof = n - 2.0;
    if (dof >= 1.0) {
        const double s2 = sse / dof;
        const double t = t_quantile_95(dof);
        out.slope_ci = t * std::sqrt(s2 / sxx_c);
        out.intercept_ci = t * std::sqrt(s2 * (1.0 / n + (sx / n) * (sx / n) / sxx_c));
    }
    // Rounding slack so an exact line with zero residuals still qualifies.
    out.intercept_consistent_with_zero = std::abs(out.intercept) <= out.intercept_ci + 1e-12 * std::abs(sy / n);
    out.clearance_db = ymax > 0.0 ? 10.0 * std::log10(ymax / dark) : -std::numeric_limits<double>::infinity();
    out.linear = out.max_relative_residual < 0.05;
    return out;
}

double t_quantile_95(double dof) {
    if (!(dof > 0.0)) {
        throw DomainError("Student-t quantile needs positive degrees of freedom");
    }
    return boost::math::quantile(boost::math::students_t(dof), 0.975);
}

} // namespace qhd::est
