#pragma once

// Gaussian-beam diffraction, aperture coupling and loss-chain composition.
// Lengths are in meters throughout.

#include "qhd/core.hpp"

#include <string>
#include <vector>

namespace qhd::link {

class GaussianBeam {
public:
    GaussianBeam(double waist_m, double wavelength_m);

    /// Beam specified by its Rayleigh range instead of the wavelength.
    static GaussianBeam from_rayleigh_range(double waist_m, double rayleigh_m);

    double waist() const { return waist_; }
    double wavelength() const { return wavelength_; }
    double rayleigh_range() const { return rayleigh_; }

private:
    double waist_;
    double wavelength_;
    double rayleigh_;
};

struct LinkScenario {
    double range_m = 0.0;
    GaussianBeam beam{0.06, 1.064e-6};
    double rx_aperture_radius_m = 0.0;
    DecibelLoss atmospheric_loss;
    DecibelLoss technical_loss;

    void validate() const;
};

/// w(z) = w0 * sqrt(1 + (z/z0)^2).
double spot_radius(const GaussianBeam& beam, double z_m);

struct ApertureCoupling {
    double fraction;  // 1 - exp(-2 r0^2 / w(z)^2)
    DecibelLoss loss;
};

ApertureCoupling aperture_coupling(const GaussianBeam& beam, double z_m, double r0_m);

/// Far-field, small-aperture rescaling: collected power grows as the
/// aperture area, so loss' = loss - 20 log10(d_new / d_old). Only valid
/// while both apertures are much smaller than the spot.
DecibelLoss rescale_aperture(DecibelLoss loss, double d_old_m, double d_new_m);

/// Far-field range rescaling, intensity ~ 1/z^2: loss' = loss + 20 log10(z_new / z_old).
/// Both ranges must be far beyond the Rayleigh range.
DecibelLoss rescale_range(DecibelLoss loss, double z_old_m, double z_new_m);

struct LossItem {
    std::string name;
    DecibelLoss loss;
};

struct LinkLoss {
    DecibelLoss total;
    std::vector<LossItem> items;
};

/// Sums itemized dB losses; total equals the sum of the items exactly.
LinkLoss sum_losses(std::vector<LossItem> items);

/// Diffraction coupling + atmospheric + technical, itemized.
LinkLoss total_link_loss(const LinkScenario& scenario);

struct VirtualApertureBound {
    ExcessNoise at_ground_aperture;  // after undoing the technical loss
    ExcessNoise above_atmosphere;    // after also undoing the atmospheric loss
};

/// Scales a measured excess noise back through the station and then through
/// the atmosphere, assuming a noiseless receiver.
VirtualApertureBound virtual_aperture_bound(const ExcessNoise& measured, DecibelLoss technical_loss,
                                            DecibelLoss atmospheric_loss);

} // namespace qhd::link
