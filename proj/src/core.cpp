#include "qhd/core.hpp"

#include "qhd/error.hpp"

#include <cmath>
#include <string>

namespace qhd {

namespace {

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw DomainError(std::string(what) + " must be finite");
    }
}

} // namespace

DecibelLoss::DecibelLoss(double db) : db_(db) {
    require_finite(db, "loss");
    if (db < 0.0) {
        throw DomainError("loss must be non-negative, got " + std::to_string(db) + " dB");
    }
}

double DecibelLoss::transmittance() const { return db_to_transmittance(*this); }

double db_to_transmittance(DecibelLoss loss) {
    require_finite(loss.db(), "loss");
    return std::pow(10.0, -loss.db() / 10.0);
}

DecibelLoss transmittance_to_db(double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) {
        throw DomainError("transmittance must lie in (0, 1]");
    }
    // -10*log10(1) is -0.0; normalize so the loss validates.
    return DecibelLoss(tau == 1.0 ? 0.0 : -10.0 * std::log10(tau));
}

QuadratureStats::QuadratureStats(double mean, double variance, std::uint64_t sample_count)
    : mean_(mean), variance_(variance), sample_count_(sample_count) {
    require_finite(mean, "mean");
    require_finite(variance, "variance");
    if (variance <= 0.0) {
        throw DomainError("variance must be positive");
    }
    if (sample_count < 2) {
        throw DomainError("quadrature statistics need at least two samples");
    }
}

ExcessNoise::ExcessNoise(double value, double error) : value_(value), error_(error) {
    require_finite(value, "excess noise");
    require_finite(error, "excess noise error");
    if (value < -1.0) {
        throw DomainError("excess noise below -1 implies a negative variance");
    }
    if (error < 0.0) {
        throw DomainError("error half-width must be non-negative");
    }
}

double ExcessNoise::db_above_vacuum() const { return 10.0 * std::log10(value_ + 1.0); }

void QuadratureConvention::validate() const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) {
        throw DomainError("quadrature convention kappa must be positive");
    }
}

void AmplifierSpec::validate() const {
    require_finite(gain_db, "gain");
    require_finite(noise_figure_db, "noise figure");
    if (gain_db < 0.0 || noise_figure_db < 0.0) {
        throw DomainError("amplifier gain and noise figure must be >= 0 dB");
    }
}

double excess_noise_from_variances(double signal_var, double vacuum_var, double dark_var) {
    require_finite(signal_var, "signal variance");
    require_finite(vacuum_var, "vacuum variance");
    require_finite(dark_var, "dark variance");
    if (signal_var <= 0.0 || vacuum_var <= 0.0 || dark_var < 0.0) {
        throw DomainError("variances must be positive");
    }
    const double clearance = vacuum_var - dark_var;
    if (clearance <= 0.0) {
        throw CalibrationError("vacuum variance does not clear the dark noise floor");
    }
    return (signal_var - dark_var) / clearance - 1.0;
}

ExcessNoise excess_noise(const QuadratureStats& signal, const QuadratureStats& vacuum,
                         const QuadratureStats& dark) {
    return ExcessNoise(
        excess_noise_from_variances(signal.variance(), vacuum.variance(), dark.variance()));
}

ExcessNoise scale_excess_noise_down(const ExcessNoise& e, DecibelLoss loss) {
    if (e.value() < 0.0) {
        throw DomainError("attenuation of excess noise is only defined for E >= 0");
    }
    const double tau = db_to_transmittance(loss);
    return ExcessNoise(tau * e.value(), tau * e.error());
}

ExcessNoise bound_upstream_excess_noise(const ExcessNoise& e, DecibelLoss loss) {
    const double tau = db_to_transmittance(loss);
    // A negative measured E maps below -1 for large losses; the bound is
    // then reported as the physical floor.
    const double scaled = e.value() / tau;
    return ExcessNoise(scaled < -1.0 ? -1.0 : scaled, e.error() / tau);
}

ExcessNoise amplifier_thermal_excess(const AmplifierSpec& spec) {
    spec.validate();
    const double gain = std::pow(10.0, spec.gain_db / 10.0);
    const double noise_factor = std::pow(10.0, spec.noise_figure_db / 10.0);
    return ExcessNoise(gain * noise_factor - 1.0);
}

double soft_clip(double x, double knee) {
    const double mag = std::abs(x);
    if (!(mag > knee)) {
        return x;
    }
    const double width = 0.5 * knee;
    return std::copysign(knee + width * std::tanh((mag - knee) / width), x);
}

double soft_clip_inverse(double y, double knee) {
    const double mag = std::abs(y);
    if (!(mag > knee)) {
        return y;
    }
    const double width = 0.5 * knee;
    const double t = std::min((mag - knee) / width, 1.0 - 1e-7);
    return std::copysign(knee + width * std::atanh(t), y);
}

} // namespace qhd
