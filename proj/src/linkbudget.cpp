#include "qhd/linkbudget.hpp"

#include "qhd/error.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace qhd::link {

namespace {

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw DomainError(std::string(what) + " must be positive and finite");
    }
}

DecibelLoss checked_loss(double db, const char* what) {
    if (db < 0.0) {
        throw DomainError(std::string(what) + " rescaling produced a gain; outside the far-field regime");
    }
    return DecibelLoss(db);
}

} // namespace

GaussianBeam::GaussianBeam(double waist_m, double wavelength_m)
    : waist_(waist_m), wavelength_(wavelength_m) {
    require_positive(waist_m, "beam waist");
    require_positive(wavelength_m, "wavelength");
    rayleigh_ = std::numbers::pi * waist_ * waist_ / wavelength_;
}

GaussianBeam GaussianBeam::from_rayleigh_range(double waist_m, double rayleigh_m) {
    require_positive(waist_m, "beam waist");
    require_positive(rayleigh_m, "Rayleigh range");
    return GaussianBeam(waist_m, std::numbers::pi * waist_m * waist_m / rayleigh_m);
}

void LinkScenario::validate() const {
    require_positive(range_m, "range");
    require_positive(rx_aperture_radius_m, "receive aperture radius");
}

double spot_radius(const GaussianBeam& beam, double z_m) {
    if (!(z_m >= 0.0) || !std::isfinite(z_m)) {
        throw DomainError("propagation distance must be non-negative");
    }
    const double ratio = z_m / beam.rayleigh_range();
    return beam.waist() * std::sqrt(1.0 + ratio * ratio);
}

ApertureCoupling aperture_coupling(const GaussianBeam& beam, double z_m, double r0_m) {
    require_positive(z_m, "range");
    require_positive(r0_m, "aperture radius");
    const double w = spot_radius(beam, z_m);
    // -expm1 keeps full precision for apertures far below the spot size.
    const double fraction = -std::expm1(-2.0 * r0_m * r0_m / (w * w));
    return {fraction, transmittance_to_db(fraction)};
}

DecibelLoss rescale_aperture(DecibelLoss loss, double d_old_m, double d_new_m) {
    require_positive(d_old_m, "aperture diameter");
    require_positive(d_new_m, "aperture diameter");
    return checked_loss(loss.db() - 20.0 * std::log10(d_new_m / d_old_m), "aperture");
}

DecibelLoss rescale_range(DecibelLoss loss, double z_old_m, double z_new_m) {
    require_positive(z_old_m, "range");
    require_positive(z_new_m, "range");
    return checked_loss(loss.db() + 20.0 * std::log10(z_new_m / z_old_m), "range");
}

LinkLoss sum_losses(std::vector<LossItem> items) {
    double sum = 0.0;
    for (const auto& item : items) {
        sum += item.loss.db();
    }
    return {DecibelLoss(sum), std::move(items)};
}

LinkLoss total_link_loss(const LinkScenario& scenario) {
    scenario.validate();
    const auto coupling =
        aperture_coupling(scenario.beam, scenario.range_m, scenario.rx_aperture_radius_m);
    return sum_losses({
        {"diffraction", coupling.loss},
        {"atmospheric", scenario.atmospheric_loss},
        {"technical", scenario.technical_loss},
    });
}

VirtualApertureBound virtual_aperture_bound(const ExcessNoise& measured, DecibelLoss technical_loss,
                                            DecibelLoss atmospheric_loss) {
    VirtualApertureBound out;
    out.at_ground_aperture = bound_upstream_excess_noise(measured, technical_loss);
    out.above_atmosphere = bound_upstream_excess_noise(out.at_ground_aperture, atmospheric_loss);
    return out;
}

} // namespace qhd::link
