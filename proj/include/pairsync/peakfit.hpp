#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>

#include "pairsync/core_time.hpp"
#include "pairsync/peak_shape.hpp"
#include "pairsync/xcorr.hpp"

namespace pairsync::fit {

/// Parameter order used by the model, its Jacobian and the covariance:
/// background per bin, the two peak areas (pairs), the two peak centers.
enum Param : int { kA0 = 0, kA1 = 1, kA2 = 2, kTauAB = 3, kTauBA = 4, kNumParams = 5 };

using Params = Eigen::Matrix<double, kNumParams, 1>;
using Covariance = Eigen::Matrix<double, kNumParams, kNumParams>;

/// Expected counts in a bin of width Δ centered at τ:
///   a0 + Δ·(a1·V(τ − τ_AB) + a2·V(τ − τ_BA)).
struct DoublePeakModel {
  PeakShape shape;
  double bin_width_ps = 16.0;

  double value(const Params& p, double tau_ps) const;
  Params gradient(const Params& p, double tau_ps) const;
};

struct DoublePeakFit {
  double a0 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double tau_ab_ps = 0.0;
  double tau_ba_ps = 0.0;
  Covariance covariance = Covariance::Zero();
  double chi2_red = 0.0;
  bool converged = false;
  int iterations = 0;
  std::size_t n_bins = 0;

  Params params() const;
  double sigma(Param p) const { return std::sqrt(covariance(p, p)); }
};

struct FitOptions {
  /// Bins farther than this from either candidate are ignored.
  double margin_ps = 10.0 * kPsPerNs;
  int max_iterations = 200;
  double step_tolerance = 1e-8;
};

/// Weighted least squares (weights 1/max(count, 1)) with Levenberg–Marquardt
/// damping and an analytic Jacobian; the peak shape is held fixed.
/// Throws DegenerateOverlap if the peaks sit closer than FWHM/2, and
/// NotConverged if the iteration budget runs out.
DoublePeakFit fit_double_peak(const xcorr::CorrelationHistogram& h, const PeakShape& shape,
                              const xcorr::PeakCandidates& init, const FitOptions& options = {});

/// Same fit on arbitrary (possibly non-integer) bin contents at ascending
/// bin centers of width `bin_width_ps`.
DoublePeakFit fit_double_peak(std::span<const double> tau_ps, std::span<const double> counts,
                              double bin_width_ps, const PeakShape& shape,
                              const xcorr::PeakCandidates& init, const FitOptions& options = {});

struct SyncEstimate {
  double delta_ps = 0.0;
  double round_trip_ps = 0.0;
  double sigma_delta_ps = 0.0;
  double sigma_round_trip_ps = 0.0;
  std::uint64_t block_index = 0;
  Picoseconds epoch_mid_ps = 0;

  friend bool operator==(const SyncEstimate&, const SyncEstimate&) = default;
};

/// Midpoint and separation of the two fitted peaks.
SyncEstimate estimate_sync(const DoublePeakFit& fit);

}  // namespace pairsync::fit
