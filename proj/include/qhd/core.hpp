#pragma once

// Phase-space quantities and the excess-noise algebra shared by every other
// module. All variances are in shot-noise units (SNU) unless stated
// otherwise: the vacuum quadrature variance is 1 after normalization.

#include <cstdint>

namespace qhd {

/// A non-negative loss in decibels.
class DecibelLoss {
public:
    constexpr DecibelLoss() = default;
    explicit DecibelLoss(double db);

    double db() const { return db_; }
    double transmittance() const;

    friend DecibelLoss operator+(DecibelLoss a, DecibelLoss b) { return DecibelLoss(a.db_ + b.db_); }
    friend bool operator==(DecibelLoss a, DecibelLoss b) = default;

private:
    double db_ = 0.0;
};

/// tau = 10^(-dB/10). Throws DomainError for non-finite input.
double db_to_transmittance(DecibelLoss loss);

/// Inverse of db_to_transmittance; tau must lie in (0, 1].
DecibelLoss transmittance_to_db(double tau);

/// Sample statistics of one homodyne quadrature record. Units are whatever
/// the record is in; only ratios of variances enter the excess noise.
class QuadratureStats {
public:
    QuadratureStats(double mean, double variance, std::uint64_t sample_count);

    double mean() const { return mean_; }
    double variance() const { return variance_; }
    std::uint64_t sample_count() const { return sample_count_; }

private:
    double mean_;
    double variance_;
    std::uint64_t sample_count_;
};

/// Variance above the vacuum level, in SNU, with a symmetric half-width.
class ExcessNoise {
public:
    ExcessNoise() = default;
    explicit ExcessNoise(double value, double error = 0.0);

    double value() const { return value_; }
    double error() const { return error_; }

    /// 10*log10(E + 1): total variance relative to vacuum, in dB.
    double db_above_vacuum() const;

private:
    double value_ = 0.0;
    double error_ = 0.0;
};

/// Relation between coherent amplitude and quadrature mean,
/// <X> = kappa * alpha when the vacuum variance is 1.
struct QuadratureConvention {
    double kappa = 2.0;

    void validate() const;
};

struct AmplifierSpec {
    double gain_db = 0.0;
    double noise_figure_db = 0.0;

    void validate() const;
};

/// E = (V_sig - V_dark) / (V_vac - V_dark) - 1 on raw variances.
/// Throws CalibrationError when V_vac <= V_dark, DomainError when any
/// variance is non-positive.
double excess_noise_from_variances(double signal_var, double vacuum_var, double dark_var);

ExcessNoise excess_noise(const QuadratureStats& signal, const QuadratureStats& vacuum,
                         const QuadratureStats& dark);

/// Linear attenuation of an excess variance through `loss`: E' = tau * E.
/// Only defined for E >= 0.
ExcessNoise scale_excess_noise_down(const ExcessNoise& e, DecibelLoss loss);

/// Inverse of scale_excess_noise_down: E' = E / tau, error / tau.
ExcessNoise bound_upstream_excess_noise(const ExcessNoise& e, DecibelLoss loss);

/// Thermal excess of an amplified coherent state, E = G*F - 1.
ExcessNoise amplifier_thermal_excess(const AmplifierSpec& spec);

/// Detector soft clip: identity up to `knee`, then a tanh roll-off that
/// approaches 1.5 * knee.
double soft_clip(double x, double knee);
/// Inverse of soft_clip; outputs at or beyond 1.5 * knee map to the
/// largest finite preimage representable near that level.
double soft_clip_inverse(double y, double knee);

} // namespace qhd
