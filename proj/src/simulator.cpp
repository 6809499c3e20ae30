#include "qhd/simulator.hpp"

#include "qhd/error.hpp"
#include "qhd/hash.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <limits>
#include <numbers>
#include <random>

namespace qhd::sim {

namespace {

constexpr std::uint64_t stream_signal = 0;
constexpr std::uint64_t stream_vacuum = 1;
constexpr std::uint64_t stream_dark = 2;
constexpr std::uint64_t stream_filter_state = 16;

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ConfigError("invalid simulation config: " + what);
    }
}

bool positive(double v) { return v > 0.0 && std::isfinite(v); }

std::string provenance_tag(const SimulationConfig& config) {
    std::ostringstream os;
    os << "sim:" << std::hex << std::setw(16) << std::setfill('0') << config.hash() << std::dec
       << ":seed=" << config.rng_seed;
    return os.str();
}

// Mean of the noiseless waveform, in SNU, at sample index k.
class MeanWaveform {
public:
    explicit MeanWaveform(const SimulationConfig& config)
        : config_(config), ratio_(config.ratio()), half_transient_(config.transient_fraction / 2) {}

    double at(std::uint64_t k) {
        const double tau = (static_cast<double>(k) - config_.clock_offset) / ratio_;
        const double nearest = std::floor(tau + 0.5);
        const auto n = static_cast<std::int64_t>(nearest);
        const double u = tau - nearest;  // [-0.5, 0.5)
        if (n != current_) {
            seek(n);
        }
        if (half_transient_ > 0.0) {
            if (u > 0.5 - half_transient_) {
                return crossing(levels_[1], levels_[2], (u - 0.5 + half_transient_) / (2 * half_transient_));
            }
            if (u < -0.5 + half_transient_) {
                return crossing(levels_[0], levels_[1], (u + 0.5 + half_transient_) / (2 * half_transient_));
            }
        }
        return levels_[1];
    }

private:
    static double crossing(double from, double to, double pos) {
        return from + (to - from) * 0.5 * (1.0 - std::cos(std::numbers::pi * pos));
    }

    double level(std::int64_t n) const {
        return symbol_sign(config_.rng_seed, n) * config_.kappa * envelope_alpha(config_, n);
    }

    void seek(std::int64_t n) {
        if (n == current_ + 1) {
            levels_[0] = levels_[1];
            levels_[1] = levels_[2];
            levels_[2] = level(n + 1);
        } else {
            levels_ = {level(n - 1), level(n), level(n + 1)};
        }
        current_ = n;
    }

    const SimulationConfig& config_;
    double ratio_;
    double half_transient_;
    std::int64_t current_ = std::numeric_limits<std::int64_t>::min();
    std::array<double, 3> levels_{};
};

// Band-limited Gaussian trace around a (possibly zero) mean waveform.
template <class MeanFn>
RawTrace render(const SimulationConfig& config, std::uint64_t n_samples, double variance,
                std::uint64_t stream, TraceKind kind, MeanFn&& mean) {
    if (n_samples == 0) {
        throw ConfigError("simulation produces no samples; duration too short");
    }
    const double a = config.filter_pole();
    const double white_sigma = std::sqrt(variance * (1.0 + a) / (1.0 - a));
    const double limit = config.kappa * config.saturation_alpha;

    const NoiseStream noise(config.rng_seed, stream);
    const NoiseStream state_noise(config.rng_seed, stream + stream_filter_state);

    double initial = 0.0;
    state_noise.fill(0, std::span(&initial, 1));
    // Start the recursion from its stationary distribution.
    double y = mean(0) + std::sqrt(variance) * initial;

    RawTrace trace;
    trace.kind = kind;
    trace.sample_rate_hz = config.sample_rate_hz;
    trace.provenance = provenance_tag(config);
    trace.samples.resize(n_samples);

    std::vector<double> block(NoiseStream::block_size);
    for (std::uint64_t start = 0; start < n_samples; start += NoiseStream::block_size) {
        const auto len = std::min<std::uint64_t>(NoiseStream::block_size, n_samples - start);
        noise.fill(start, std::span(block.data(), len));
        for (std::uint64_t i = 0; i < len; ++i) {
            const std::uint64_t k = start + i;
            const double x = mean(k) + white_sigma * block[i];
            y = a * y + (1.0 - a) * x;
            trace.samples[k] = static_cast<float>(config.detector_gain * saturate(y, limit));
        }
    }
    return trace;
}

} // namespace

void SimulationConfig::validate() const {
    require(positive(symbol_rate_hz), "symbol_rate must be positive");
    require(positive(sample_rate_hz), "sample_rate must be positive");
    require(sample_rate_hz > 2.0 * symbol_rate_hz, "sample_rate must exceed twice the symbol rate");
    require(std::isfinite(clock_ppm_error) && std::abs(clock_ppm_error) < 1e5, "clock_ppm_error out of range");
    require(am_period_symbols >= 2 && am_period_symbols % 2 == 0, "am_period_symbols must be even and >= 2");
    require(std::isfinite(am_origin_symbols), "am_origin_symbols must be finite");
    require(min_alpha >= 0.0 && peak_alpha >= min_alpha && std::isfinite(peak_alpha),
            "need 0 <= min_alpha <= peak_alpha");
    require(std::isfinite(excess_noise) && excess_noise > -1.0, "excess_noise must exceed -1");
    require(std::isfinite(dark_clearance_db), "dark_clearance must be finite");
    require(positive(analog_bandwidth_hz) && analog_bandwidth_hz <= sample_rate_hz / 2,
            "analog_bandwidth must lie in (0, sample_rate/2]");
    require(transient_fraction >= 0.0 && transient_fraction < 0.5, "transient_fraction must lie in [0, 0.5)");
    require(saturation_alpha > 0.0, "saturation_alpha must be positive");
    require(positive(kappa), "kappa must be positive");
    require(positive(detector_gain), "detector_gain must be positive");
    require(positive(duration_s), "duration must be positive");
    require(positive(calibration_duration_s), "calibration_duration must be positive");
    require(clock_offset >= 0.0 && clock_offset < ratio(), "clock_offset must lie in [0, ratio)");
}

double SimulationConfig::ratio() const {
    return sample_rate_hz / (symbol_rate_hz * (1.0 + clock_ppm_error * 1e-6));
}

std::uint64_t SimulationConfig::sample_count() const {
    return static_cast<std::uint64_t>(std::llround(duration_s * sample_rate_hz));
}

std::uint64_t SimulationConfig::calibration_sample_count() const {
    return static_cast<std::uint64_t>(std::llround(calibration_duration_s * sample_rate_hz));
}

double SimulationConfig::dark_variance() const { return std::pow(10.0, -dark_clearance_db / 10.0); }

double SimulationConfig::filter_pole() const {
    return std::exp(-2.0 * std::numbers::pi * analog_bandwidth_hz / sample_rate_hz);
}

std::string SimulationConfig::canonical_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "symbol_rate = " << symbol_rate_hz << '\n'
       << "sample_rate = " << sample_rate_hz << '\n'
       << "clock_offset = " << clock_offset << '\n'
       << "clock_ppm_error = " << clock_ppm_error << '\n'
       << "am_period_symbols = " << am_period_symbols << '\n'
       << "am_origin_symbols = " << am_origin_symbols << '\n'
       << "peak_alpha = " << peak_alpha << '\n'
       << "min_alpha = " << min_alpha << '\n'
       << "excess_noise = " << excess_noise << '\n'
       << "dark_clearance = " << dark_clearance_db << '\n'
       << "analog_bandwidth = " << analog_bandwidth_hz << '\n'
       << "transient_fraction = " << transient_fraction << '\n'
       << "saturation_alpha = " << saturation_alpha << '\n'
       << "kappa = " << kappa << '\n'
       << "detector_gain = " << detector_gain << '\n'
       << "duration = " << duration_s << '\n'
       << "calibration_duration = " << calibration_duration_s << '\n'
       << "seed = " << rng_seed << '\n';
    return os.str();
}

std::uint64_t SimulationConfig::hash() const { return fnv1a64(canonical_text()); }

double envelope_alpha(const SimulationConfig& config, std::int64_t symbol) {
    const double phase = 2.0 * std::numbers::pi *
                         (static_cast<double>(symbol) + 0.5 - config.am_origin_symbols) /
                         static_cast<double>(config.am_period_symbols);
    return config.min_alpha + (config.peak_alpha - config.min_alpha) * std::abs(std::sin(phase));
}

int symbol_sign(std::uint64_t seed, std::int64_t symbol) {
    const std::uint64_t key = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    return (splitmix64(key + static_cast<std::uint64_t>(symbol)) >> 63) ? -1 : 1;
}

SimulationTruth simulation_truth(const SimulationConfig& config, int n_bins) {
    config.validate();
    if (n_bins <= 0) {
        throw ConfigError("bin count must be positive");
    }
    SimulationTruth t;
    t.clock_offset = config.clock_offset;
    t.ratio = config.ratio();
    t.filter_pole = config.filter_pole();
    t.dark_variance = config.dark_variance();
    t.excess_noise = config.excess_noise;
    t.kappa = config.kappa;
    t.detector_gain = config.detector_gain;
    t.am_period_symbols = config.am_period_symbols;
    t.am_origin_symbols = config.am_origin_symbols;

    // Pulse centre n lies in the trace when round(offset + n*ratio) <= N-1.
    const auto n_samples = static_cast<double>(config.sample_count());
    const double limit = n_samples - 0.5;
    if (config.clock_offset < limit) {
        auto n = static_cast<std::uint64_t>(std::floor((limit - config.clock_offset) / t.ratio));
        while (n > 0 && config.clock_offset + static_cast<double>(n) * t.ratio >= limit) {
            --n;
        }
        while (config.clock_offset + static_cast<double>(n + 1) * t.ratio < limit) {
            ++n;
        }
        t.symbol_count = n + 1;
    }

    const std::int64_t half = config.am_period_symbols / 2;
    t.bins.assign(static_cast<std::size_t>(n_bins), {});
    std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
    for (auto& b : t.bins) {
        b.alpha_min = std::numeric_limits<double>::infinity();
        b.alpha_max = -std::numeric_limits<double>::infinity();
    }
    SimulationConfig origin_zero = config;
    origin_zero.am_origin_symbols = 0.0;
    for (std::int64_t h = 0; h < half; ++h) {
        const auto b = static_cast<std::size_t>(h * n_bins / half);
        const double alpha = envelope_alpha(origin_zero, h);
        auto& bin = t.bins[b];
        bin.alpha_mean += alpha;
        bin.alpha_min = std::min(bin.alpha_min, alpha);
        bin.alpha_max = std::max(bin.alpha_max, alpha);
        ++counts[b];
    }
    for (int b = 0; b < n_bins; ++b) {
        auto& bin = t.bins[static_cast<std::size_t>(b)];
        const double phase = (b + 0.5) * std::numbers::pi / n_bins;
        bin.alpha_center = config.min_alpha + (config.peak_alpha - config.min_alpha) * std::sin(phase);
        if (counts[static_cast<std::size_t>(b)] > 0) {
            bin.alpha_mean /= counts[static_cast<std::size_t>(b)];
        } else {
            bin.alpha_mean = bin.alpha_min = bin.alpha_max = bin.alpha_center;
        }
    }
    return t;
}

RawTrace synthesize_signal_trace(const SimulationConfig& config) {
    config.validate();
    MeanWaveform waveform(config);
    const double variance = 1.0 + config.excess_noise + config.dark_variance();
    return render(config, config.sample_count(), variance, stream_signal, TraceKind::signal,
                  [&](std::uint64_t k) { return waveform.at(k); });
}

RawTrace synthesize_vacuum_trace(const SimulationConfig& config) {
    config.validate();
    return render(config, config.calibration_sample_count(), 1.0 + config.dark_variance(), stream_vacuum,
                  TraceKind::vacuum, [](std::uint64_t) { return 0.0; });
}

RawTrace synthesize_dark_trace(const SimulationConfig& config) {
    config.validate();
    return render(config, config.calibration_sample_count(), config.dark_variance(), stream_dark,
                  TraceKind::dark, [](std::uint64_t) { return 0.0; });
}

NoiseStream::NoiseStream(std::uint64_t seed, std::uint64_t stream)
    : key_(splitmix64(seed ^ splitmix64(stream + 0x243f6a8885a308d3ULL))) {}

void NoiseStream::fill(std::uint64_t first, std::span<double> out) const {
    std::size_t written = 0;
    while (written < out.size()) {
        const std::uint64_t pos = first + written;
        const std::uint64_t block = pos / block_size;
        const std::uint64_t skip = pos % block_size;
        std::mt19937_64 engine(splitmix64(key_ + block));
        std::normal_distribution<double> normal;
        for (std::uint64_t i = 0; i < skip; ++i) {
            (void)normal(engine);
        }
        const auto take = std::min<std::uint64_t>(block_size - skip, out.size() - written);
        for (std::uint64_t i = 0; i < take; ++i) {
            out[written + i] = normal(engine);
        }
        written += take;
    }
}

std::vector<double> apply_analog_bandwidth(std::span<const double> samples, double sample_rate_hz,
                                           double bandwidth_hz) {
    if (!(sample_rate_hz > 0.0) || !(bandwidth_hz > 0.0) || bandwidth_hz > sample_rate_hz / 2) {
        throw DomainError("bandwidth must lie in (0, sample_rate/2]");
    }
    std::vector<double> out(samples.size());
    if (samples.empty()) {
        return out;
    }
    const double a = std::exp(-2.0 * std::numbers::pi * bandwidth_hz / sample_rate_hz);
    double y = samples.front();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        y = a * y + (1.0 - a) * samples[k];
        out[k] = y;
    }
    return out;
}

double saturate(double x, double limit) { return soft_clip(x, limit); }

std::vector<double> apply_saturation(std::span<const double> samples, double threshold_alpha,
                                     const QuadratureConvention& convention) {
    convention.validate();
    if (!(threshold_alpha > 0.0)) {
        throw DomainError("saturation threshold must be positive");
    }
    const double limit = convention.kappa * threshold_alpha;
    std::vector<double> out(samples.size());
    std::transform(samples.begin(), samples.end(), out.begin(), [&](double x) { return saturate(x, limit); });
    return out;
}

} // namespace qhd::sim
