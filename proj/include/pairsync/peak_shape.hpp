#pragma once

#include <cmath>
#include <numbers>

namespace pairsync::fit {

/// Pseudo-Voigt timing response: Lorentzian fraction `f` and common half
/// width `sigma_ps` shared by the Gaussian and Lorentzian parts.
struct PeakShape {
  double f = 0.2;
  double sigma_ps = 290.0;

  /// Throws InvalidArgument unless 0 <= f <= 1 and sigma > 0.
  void validate() const;

  /// Standard deviation of the Gaussian component, sigma / sqrt(2 ln 2).
  double gaussian_sd_ps() const { return sigma_ps / std::sqrt(2.0 * std::numbers::ln2); }

  /// Both components have half width at half maximum sigma.
  double fwhm_ps() const { return 2.0 * sigma_ps; }

  friend bool operator==(const PeakShape&, const PeakShape&) = default;
};

/// Unit-area pseudo-Voigt density in 1/ps.
double pseudo_voigt_density(double tau_ps, const PeakShape& shape);

/// d/dtau of pseudo_voigt_density.
double pseudo_voigt_derivative(double tau_ps, const PeakShape& shape);

}  // namespace pairsync::fit
