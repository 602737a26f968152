#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pairsync/core_time.hpp"
#include "pairsync/error.hpp"
#include "pairsync/peakfit.hpp"
#include "pairsync/xcorr.hpp"

namespace pairsync::sync {

struct TrackOptions {
  Picoseconds block_ps = 20 * kPsPerSecond;
  fit::PeakShape shape;
  /// `locate.shape` is overridden by `shape`.
  xcorr::LocateOptions locate;
  fit::FitOptions fit;
  /// 0 picks std::thread::hardware_concurrency().
  unsigned threads = 0;
};

/// One block of a tracking run: an estimate, or a recorded gap.
struct BlockResult {
  std::uint64_t block_index = 0;
  Picoseconds epoch_mid_ps = 0;
  bool partial = false;
  std::optional<fit::SyncEstimate> estimate;
  std::optional<ErrorCode> failure;
  std::string failure_message;
  std::string label;

  bool ok() const noexcept { return estimate.has_value(); }
};

struct SyncSeries {
  Picoseconds block_ps = 0;
  std::vector<BlockResult> blocks;

  std::size_t successes() const;
  std::vector<fit::SyncEstimate> estimates() const;
};

/// Bob's tags that can pair with Alice's block [start, end): τ is searched in
/// [−R, R), so the slice is [start − R, end + R).
std::pair<Picoseconds, Picoseconds> bob_window_for(const Block& alice_block,
                                                   const TrackOptions& options);

/// locate_peaks → fit_double_peak → estimate_sync on one block. `bob_tags`
/// may be any sorted superset of the block's Bob window.
fit::SyncEstimate estimate_block(const Block& alice_block, std::span<const TimeTag> bob_tags,
                                 const TrackOptions& options);

/// Block-wise offset tracking over Alice's clock. Failed blocks become gaps;
/// throws TrackingFailed when no block yields an estimate.
SyncSeries track(const TagStream& alice, const TagStream& bob, const TrackOptions& options);

// ---- clock model --------------------------------------------------------

struct DriftFit {
  double a_per_s = 0.0;
  double d = 0.0;
  double b_ps = 0.0;
  double sigma_a_per_s = 0.0;
  double sigma_d = 0.0;
  double sigma_b_ps = 0.0;
  std::vector<std::uint64_t> block_indices;
  std::vector<double> epochs_s;
  std::vector<double> residuals_ps;

  /// a·t² + d·t + b in ps for t in seconds.
  double evaluate_ps(double t_s) const;
};

/// Least-squares parabola δ(t) = a·t² + d·t + b over block mid-epochs.
/// `weighted` uses 1/σ_δ² weights instead of the unweighted fit.
DriftFit fit_drift(const SyncSeries& series, bool weighted = false);
DriftFit fit_drift(std::span<const double> epochs_s, std::span<const double> delta_ps,
                   std::span<const double> sigma_ps = {});

// ---- stability ----------------------------------------------------------

/// Overlapping Allan deviation of the fractional frequency implied by a
/// phase series x (ps) sampled every tau0_s, at averaging time m·tau0.
/// NaN samples are gaps; terms touching a gap are skipped.
double allan_deviation(std::span<const double> x_ps, double tau0_s, std::size_t m);

/// TDEV(m·tau0) = m·tau0/√3 · MDEV(m·tau0), in ps.
double time_deviation(std::span<const double> x_ps, double tau0_s, std::size_t m);

struct StabilityReport {
  double tau0_s = 0.0;
  std::vector<std::pair<double, double>> adev;
  std::vector<std::pair<double, double>> tdev;
  double residual_std_ps = 0.0;
};

/// ADEV/TDEV at octave-spaced averaging times on the drift residuals, laid
/// on the block grid with gaps as NaN.
StabilityReport stability_report(const DriftFit& drift, double tau0_s);

// ---- precision and attacks ---------------------------------------------

struct PrecisionModel {
  double v0_per_ns = 1.5;
  double rate_hz = 200.0;
  double t_a_s = 1.0;
};

/// Poisson-limited offset precision (1/√2)·(1/(2 V(0)))·(1/√(R·T_a)), in ps.
double predict_precision(const PrecisionModel& model);

struct LinearFit {
  double slope = 0.0;
  double sigma_slope = 0.0;
  double intercept = 0.0;
  std::size_t n = 0;
};

/// Least-squares slope of offset (or residual) against path length, ps/m.
LinearFit delay_correlation(std::span<const double> distance_m, std::span<const double> value_ps);

/// Correction that turns the midpoint into the true offset under channel
/// asymmetry: δ_true = midpoint + asymmetry_bias = midpoint − (Δt_AB − Δt_BA)/2.
double asymmetry_bias(double delta_ab_ps, double delta_ba_ps);

struct SegmentSummary {
  std::string label;
  std::size_t first_block = 0;
  std::size_t n = 0;
  double mean_delta_ps = 0.0;
  double std_delta_ps = 0.0;
  double mean_round_trip_ps = 0.0;
};

/// Groups consecutive successful blocks by label.
std::vector<SegmentSummary> summarize_segments(const SyncSeries& series);

}  // namespace pairsync::sync
