#pragma once

// Amplitude-period folding, Gaussian histogram fits, per-bin amplitude and
// excess noise with worst-case error bars, and detector linearity.
//
// Gaussian form: a * exp(-((x - b) / c)^2), so the variance is c^2 / 2.

#include "qhd/core.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qhd::est {

struct Histogram {
    double lo = 0.0;       // left edge of bin 0
    double width = 0.0;
    std::vector<double> counts;
    std::size_t total = 0;

    double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width; }
    std::size_t occupied() const;
};

/// Freedman-Diaconis bin width over the sample range, at least `min_bins` bins.
Histogram make_histogram(std::span<const float> samples, std::size_t min_bins = 60);

struct GaussianFitResult {
    // Single fit: a1, b1, c (a2 = b2 = 0). Double fit: shared width c.
    double a1 = 0.0, a2 = 0.0;
    double b1 = 0.0, b2 = 0.0;
    double c = 0.0;
    double ci_a1 = 0.0, ci_a2 = 0.0;
    double ci_b1 = 0.0, ci_b2 = 0.0;
    double ci_c = 0.0;
    double r_squared = 0.0;
    int iterations = 0;
    bool two_component = false;
    bool collapsed = false;  // |b2 - b1| < c / 10

    double variance() const { return 0.5 * c * c; }
    /// 95 % interval of the variance from the width interval.
    double variance_lo() const;
    double variance_hi() const;
};

struct FitOptions {
    std::size_t min_samples = 1000;
    std::size_t min_occupied_bins = 20;
    std::size_t min_histogram_bins = 60;
    /// Weight each histogram bin by 1/max(count, 1) instead of uniformly.
    bool poisson_weights = false;
    int max_iterations = 200;
};

/// Least squares of the bin-averaged Gaussian against the counts.
GaussianFitResult fit_single_gaussian(const Histogram& h, const FitOptions& options = {});
GaussianFitResult fit_single_gaussian(std::span<const float> samples, const FitOptions& options = {});

/// Two Gaussians sharing one width; canonical order b1 <= b2.
GaussianFitResult fit_double_gaussian(const Histogram& h, const FitOptions& options = {});
GaussianFitResult fit_double_gaussian(std::span<const float> samples, const FitOptions& options = {});

struct AmplitudeBin {
    int index = 0;
    double phase_lo = 0.0;  // radians of the envelope argument
    double phase_hi = 0.0;
    std::vector<float> samples;

    std::size_t count() const { return samples.size(); }
};

/// Folds the symbol sequence by AM half-period and splits each half-period
/// into `n_bins` equal-phase bins. `origin` is the symbol position of an
/// envelope zero (as returned by estimate_envelope_origin). Only whole
/// periods from symbol 0 are used; a trailing partial period is dropped.
std::vector<AmplitudeBin> superimpose_and_bin(std::span<const float> symbols, std::int64_t period_symbols,
                                              int n_bins = 50, double origin = 0.0);

/// Integer symbol position of an envelope zero in [0, period/2), from a
/// least-squares fit of A sin^2 + C to the per-position mean power.
std::int64_t estimate_envelope_origin(std::span<const float> symbols, std::int64_t period_symbols);

struct CornerResult {
    double half_width = 0.0;
    double min = 0.0;
    double max = 0.0;
    int excluded = 0;  // corners with vacuum <= dark
};

/// Worst case of E = (Vs - Vd)/(Vv - Vd) - 1 over the 8 corners of the
/// three variance intervals [lo, hi].
CornerResult worst_case_error(double vs_lo, double vs_hi, double vv_lo, double vv_hi, double vd_lo, double vd_hi);

struct BinResult {
    int index = 0;
    std::size_t count = 0;
    double alpha = 0.0;
    double alpha_fit_error = 0.0;      // corner half-width from fit CIs
    double alpha_binning_error = 0.0;
    double alpha_error = 0.0;          // the two above in quadrature
    ExcessNoise excess_noise;
    double r_squared = 0.0;
    bool collapsed = false;
    bool usable = false;
    int excluded_corners = 0;
    GaussianFitResult fit;
};

struct EstimateOptions {
    QuadratureConvention convention{};
    double saturation_alpha = 2.0;
};

/// Amplitude and excess noise of one bin against the vacuum and dark fits.
/// `usable` is left false; the caller applies the selection.
BinResult estimate_bin(const GaussianFitResult& signal, const GaussianFitResult& vacuum,
                       const GaussianFitResult& dark, const EstimateOptions& options = {});

struct BinningError {
    std::vector<double> half_width;
    double amplitude = 0.0;
    double phase = 0.0;
    bool fallback = false;  // sinusoid fit failed; neighbour differences used
};

/// C + A|sin(phi + phi0)| fitted to the selected bins' amplitudes at their phase
/// centres; half-width per bin is half the fitted range across the bin.
BinningError binning_error(std::span<const double> alphas, const std::vector<bool>& selected);

struct SweepPoint {
    double lo_power_mw = 0.0;
    double noise_variance = 0.0;
    double dark_variance = 0.0;
};

struct LinearityReport {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_ci = 0.0;
    double intercept_ci = 0.0;
    std::vector<double> residuals;           // of the dark-corrected variance
    std::vector<double> relative_residuals;
    double max_relative_residual = 0.0;
    double clearance_db = 0.0;
    bool intercept_consistent_with_zero = false;
    bool linear = false;
};

LinearityReport detector_linearity(std::span<const SweepPoint> points);

/// Two-sided 95 % Student-t quantile for `dof` degrees of freedom.
double t_quantile_95(double dof);

} // namespace qhd::est
