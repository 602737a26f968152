#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pairsync/core_time.hpp"
#include "pairsync/peak_shape.hpp"

namespace pairsync::xcorr {

/// Binned c_AB(τ) with τ = t'_b − t_a. Bin k covers
/// [tau_start + k·Δ, tau_start + (k+1)·Δ).
struct CorrelationHistogram {
  Picoseconds bin_width_ps = 1;
  Picoseconds tau_start_ps = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t n_a = 0;
  std::uint64_t n_b = 0;
  Picoseconds duration_ps = 0;

  std::size_t size() const noexcept { return counts.size(); }
  Picoseconds tau_end_ps() const noexcept {
    return tau_start_ps + bin_width_ps * static_cast<Picoseconds>(counts.size());
  }
  double bin_center_ps(std::size_t k) const noexcept {
    return static_cast<double>(tau_start_ps) +
           (static_cast<double>(k) + 0.5) * static_cast<double>(bin_width_ps);
  }
  std::uint64_t total() const noexcept;

  /// Accumulates a histogram with identical binning (disjoint blocks).
  CorrelationHistogram& operator+=(const CorrelationHistogram& other);

  friend bool operator==(const CorrelationHistogram&, const CorrelationHistogram&) = default;
};

struct Window {
  Picoseconds tau_min_ps = 0;
  Picoseconds tau_max_ps = 0;
};

/// Sort-merge sweep over two sorted tag sequences. The window is extended
/// upward to a whole number of bins. `duration_ps` defaults to the time span
/// covered by both inputs.
CorrelationHistogram cross_correlate(std::span<const TimeTag> a, std::span<const TimeTag> b,
                                     Picoseconds bin_width_ps, Window window,
                                     std::optional<Picoseconds> duration_ps = std::nullopt);
CorrelationHistogram cross_correlate(const TagStream& a, const TagStream& b,
                                     Picoseconds bin_width_ps, Window window);

struct PeakCandidates {
  double tau_right_ps = 0.0;
  double tau_left_ps = 0.0;
  double prominence_right = 0.0;
  double prominence_left = 0.0;
};

struct LocateOptions {
  Picoseconds coarse_bin_ps = 2 * kPsPerUs;
  /// Coarse search covers τ in [−range, range).
  Picoseconds coarse_range_ps = kPsPerMs;
  Picoseconds fine_bin_ps = 16;
  Picoseconds fine_half_window_ps = 4 * kPsPerUs;
  double k_sigma = 6.0;
  /// Sets the smoothing width and refinement window of the fine search.
  fit::PeakShape shape;
};

struct PeakSearch {
  PeakCandidates candidates;
  CorrelationHistogram coarse;
  CorrelationHistogram fine;
  double coarse_center_ps = 0.0;
};

/// Two-stage search: a coarse histogram over the full ambiguity range finds
/// the coincidence cluster, then a fine histogram around it resolves the
/// two peaks. Throws NoPeak if fewer than two significant peaks are found.
PeakSearch locate_peaks(std::span<const TimeTag> a, std::span<const TimeTag> b,
                        const LocateOptions& options = {},
                        std::optional<Picoseconds> duration_ps = std::nullopt);
PeakCandidates locate_peaks(const TagStream& a, const TagStream& b,
                            const LocateOptions& options = {});

/// Second stage only: the two most prominent significant maxima of a fine
/// histogram.
PeakCandidates find_peak_pair(const CorrelationHistogram& fine, const LocateOptions& options);

/// counts / (r_a · r_b · T · Δ), so accidental coincidences average to 1.
std::vector<double> normalize_g2(const CorrelationHistogram& h, double rate_a_hz,
                                 double rate_b_hz);

/// CSV with columns tau_ps,counts[,g2]; tau_ps is the bin center.
void write_histogram_csv(std::ostream& out, const CorrelationHistogram& h,
                         const std::vector<double>* g2 = nullptr);

}  // namespace pairsync::xcorr
