#include "pairsync/peak_shape.hpp"

#include <string>

#include "pairsync/error.hpp"

namespace pairsync::fit {

void PeakShape::validate() const {
  if (!(f >= 0.0 && f <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "Lorentzian fraction must lie in [0, 1], got " + std::to_string(f));
  }
  if (!(sigma_ps > 0.0) || !std::isfinite(sigma_ps)) {
    throw Error(ErrorCode::InvalidArgument,
                "peak width must be positive, got " + std::to_string(sigma_ps));
  }
}

double pseudo_voigt_density(double tau_ps, const PeakShape& shape) {
  const double s = shape.gaussian_sd_ps();
  const double z = tau_ps / s;
  const double gauss = std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
  const double w = shape.sigma_ps;
  const double lorentz = w / (std::numbers::pi * (tau_ps * tau_ps + w * w));
  return (1.0 - shape.f) * gauss + shape.f * lorentz;
}

double pseudo_voigt_derivative(double tau_ps, const PeakShape& shape) {
  const double s = shape.gaussian_sd_ps();
  const double z = tau_ps / s;
  const double gauss = std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
  const double w = shape.sigma_ps;
  const double q = tau_ps * tau_ps + w * w;
  const double dlorentz = -2.0 * w * tau_ps / (std::numbers::pi * q * q);
  return (1.0 - shape.f) * gauss * (-tau_ps / (s * s)) + shape.f * dlorentz;
}

}  // namespace pairsync::fit
