#pragma once

// Synthetic homodyne traces of an amplitude-modulated BPSK coherent-state
// signal, with exactly known ground truth.
//
// Signal model, per sample k (SNU before the detector gain):
//   symbol n has pulse centre at clock_offset + n * ratio and mean
//   s_n * kappa * alpha_n, s_n = +-1 pseudo-random, alpha_n following the
//   |sin| envelope; adjacent symbols of different mean are joined by a
//   raised-cosine crossing of width transient_fraction * ratio centred on
//   the symbol boundary. White Gaussian noise of variance
//   (1 + excess_noise) + dark is added, then a single-pole low-pass at the
//   analog bandwidth, then soft saturation, then the detector gain.
//
// The noise is pre-scaled by sqrt((1+a)/(1-a)) so that the variance after
// the low-pass equals the configured value.

#include "qhd/core.hpp"
#include "qhd/trace.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qhd::sim {

struct SimulationConfig {
    double symbol_rate_hz = 2.8125e9;
    double sample_rate_hz = 40e9;
    double clock_offset = 5.238;             // samples, in [0, ratio)
    double clock_ppm_error = -3.581078582;   // on symbol_rate
    std::int64_t am_period_symbols = 1600;
    double am_origin_symbols = 0.0;          // envelope zero at this symbol position
    double peak_alpha = 2.7;
    double min_alpha = 0.0;                  // modulation floor of the envelope
    double excess_noise = 0.0;
    double dark_clearance_db = 6.0;
    double analog_bandwidth_hz = 4e9;
    double transient_fraction = 0.1;
    double saturation_alpha = 2.0;           // +inf disables saturation
    double kappa = 2.0;
    double detector_gain = 0.05;
    double duration_s = 1.25e-3;
    double calibration_duration_s = 1.25e-4; // vacuum and dark traces
    std::uint64_t rng_seed = 1;

    void validate() const;

    /// True samples per symbol.
    double ratio() const;
    double nominal_ratio() const { return sample_rate_hz / symbol_rate_hz; }
    std::uint64_t sample_count() const;
    std::uint64_t calibration_sample_count() const;
    double dark_variance() const;
    /// Pole of the single-pole low-pass, a = exp(-2 pi B / fs).
    double filter_pole() const;
    /// Canonical `key = value` text; its FNV-1a hash tags the traces.
    std::string canonical_text() const;
    std::uint64_t hash() const;
};

/// Envelope amplitude of symbol n (may be negative n).
double envelope_alpha(const SimulationConfig& config, std::int64_t symbol);

/// BPSK sign of symbol n, +1 or -1.
int symbol_sign(std::uint64_t seed, std::int64_t symbol);

struct BinTruth {
    double alpha_center = 0.0;  // envelope at the bin's phase centre
    double alpha_mean = 0.0;    // mean over the bin's symbol positions
    double alpha_min = 0.0;
    double alpha_max = 0.0;
};

struct SimulationTruth {
    double clock_offset = 0.0;
    double ratio = 0.0;
    std::uint64_t symbol_count = 0;  // pulse centres inside the trace
    double filter_pole = 0.0;
    double dark_variance = 0.0;
    double excess_noise = 0.0;
    double kappa = 2.0;
    double detector_gain = 1.0;
    std::int64_t am_period_symbols = 0;
    double am_origin_symbols = 0.0;
    std::vector<BinTruth> bins;
};

SimulationTruth simulation_truth(const SimulationConfig& config, int n_bins = 50);

RawTrace synthesize_signal_trace(const SimulationConfig& config);
RawTrace synthesize_vacuum_trace(const SimulationConfig& config);
RawTrace synthesize_dark_trace(const SimulationConfig& config);

/// Noise source whose values depend only on (seed, stream, sample index);
/// any partition of a sample range reproduces the same numbers.
class NoiseStream {
public:
    static constexpr std::uint64_t block_size = 1u << 16;

    NoiseStream(std::uint64_t seed, std::uint64_t stream);

    /// Unit-variance normals for samples [first, first + out.size()).
    void fill(std::uint64_t first, std::span<double> out) const;

private:
    std::uint64_t key_;
};

/// Single-pole low-pass y[k] = a y[k-1] + (1-a) x[k], a = exp(-2 pi B/fs),
/// DC gain 1, state initialised to the first input.
std::vector<double> apply_analog_bandwidth(std::span<const double> samples, double sample_rate_hz,
                                           double bandwidth_hz);

/// Soft clipping: identity up to kappa * threshold_alpha, then a tanh knee
/// that saturates at 1.5x the threshold. Input in SNU.
std::vector<double> apply_saturation(std::span<const double> samples, double threshold_alpha,
                                     const QuadratureConvention& convention);

/// Scalar form of apply_saturation.
double saturate(double x, double limit);

} // namespace qhd::sim
