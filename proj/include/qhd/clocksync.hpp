#pragma once

// Recovery of an asynchronous symbol clock from an oversampled trace, and
// extraction of one pulse-centre sample per symbol.
//
// Clock model: pulse centre n sits at sample position offset + n * ratio.
// The closest sample is round(offset + n * ratio), rounding halves away
// from zero.

#include "qhd/trace.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qhd::clock {

struct ClockEstimate {
    double offset = 0.0;               // samples, in [0, samples_per_symbol)
    double samples_per_symbol = 0.0;
    double objective = 0.0;            // sum of |pulse-centre sample| at (offset, ratio)
    double offset_uncertainty = 0.0;   // 1-sigma, samples
    double ratio_uncertainty = 0.0;    // 1-sigma, samples
    /// Maximizer of the pulse-centre objective before edge refinement.
    double objective_offset = 0.0;
    double objective_ratio = 0.0;
    bool edge_refined = false;
    std::size_t edges_used = 0;

    void validate() const;
    double symbol_rate_hz(double sample_rate_hz) const { return sample_rate_hz / samples_per_symbol; }
};

struct ClockSearch {
    double offset_step = 0.1;             // coarse grid, samples
    double ratio_half_width_ppm = 20.0;
    double ratio_step_ppm = 0.5;
    std::size_t coarse_decimation = 16;   // every k-th symbol during the grid search
    double tolerance = 1e-9;              // relative objective change ending refinement
    std::size_t min_symbols = 1000;
    /// Minimum contrast (in noise standard deviations) of the coarse
    /// objective across offsets; below it the trace is treated as unmodulated.
    double min_contrast_sigma = 10.0;

    /// Refine with phase-transition timing after the objective search.
    bool edge_refinement = true;
    /// Pole a of the acquisition chain's single-pole response,
    /// y[k] = a y[k-1] + (1-a) x[k]; removed before edge timing. 0 = none.
    double detector_pole = 0.0;
    /// Knee of the detector's soft clip (detector units, see soft_clip).
    /// When set, samples are linearised through the inverse clip before
    /// the pole is removed. 0 = treat the detector as linear.
    double saturation_knee = 0.0;
};

std::int64_t round_half_away(double x);

/// Number of n >= 0 with round(offset + n*ratio) inside [0, n_samples).
std::size_t pulse_center_count(std::size_t n_samples, double offset, double ratio);

/// sum_n |x(round(offset + n*ratio))| over n = first, first+stride, ... < first+count
/// (clipped to the trace).
double clock_objective(std::span<const float> samples, double offset, double ratio, std::size_t first = 0,
                       std::size_t count = SIZE_MAX, std::size_t stride = 1);

/// Throws ClockRecoveryError (flat objective, too short a trace) or
/// ClockBoundaryError (optimum on the edge of the ratio search range).
ClockEstimate recover_clock(const RawTrace& trace, double nominal_ratio, const ClockSearch& search = {});

/// One sample per symbol: element n is trace[round(offset + n*ratio)].
/// Symbols whose index would fall past the end are dropped.
std::vector<float> extract_pulse_centers(const RawTrace& trace, const ClockEstimate& clock);
std::vector<float> extract_pulse_centers(std::span<const float> samples, double offset, double ratio);

/// Lag-1 autocorrelation of a record; for white noise through a single-pole
/// low-pass this equals the pole.
double lag1_autocorrelation(std::span<const float> samples);

} // namespace qhd::clock
