#include "pairsync/xcorr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "pairsync/error.hpp"

namespace pairsync::xcorr {

std::uint64_t CorrelationHistogram::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

CorrelationHistogram& CorrelationHistogram::operator+=(const CorrelationHistogram& other) {
  if (other.bin_width_ps != bin_width_ps || other.tau_start_ps != tau_start_ps ||
      other.counts.size() != counts.size()) {
    throw Error(ErrorCode::InvalidArgument, "cannot add histograms with different binning");
  }
  for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += other.counts[k];
  n_a += other.n_a;
  n_b += other.n_b;
  duration_ps += other.duration_ps;
  return *this;
}

CorrelationHistogram cross_correlate(std::span<const TimeTag> a, std::span<const TimeTag> b,
                                     Picoseconds bin_width_ps, Window window,
                                     std::optional<Picoseconds> duration_ps) {
  if (bin_width_ps <= 0) throw Error(ErrorCode::InvalidArgument, "bin width must be positive");
  if (window.tau_min_ps >= window.tau_max_ps) {
    throw Error(ErrorCode::EmptyWindow, "correlation window is empty");
  }
  const Picoseconds span = window.tau_max_ps - window.tau_min_ps;
  const auto n_bins = static_cast<std::size_t>((span + bin_width_ps - 1) / bin_width_ps);

  CorrelationHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.tau_start_ps = window.tau_min_ps;
  h.counts.assign(n_bins, 0);
  h.n_a = a.size();
  h.n_b = b.size();
  if (duration_ps) {
    h.duration_ps = *duration_ps;
  } else if (!a.empty() || !b.empty()) {
    Picoseconds lo = std::numeric_limits<Picoseconds>::max();
    Picoseconds hi = std::numeric_limits<Picoseconds>::min();
    for (auto s : {a, b}) {
      if (s.empty()) continue;
      lo = std::min(lo, s.front().time_ps);
      hi = std::max(hi, s.back().time_ps);
    }
    h.duration_ps = hi - lo + 1;
  }

  const Picoseconds tau_lo = window.tau_min_ps;
  const Picoseconds tau_hi = h.tau_end_ps();
  std::size_t first = 0;
  for (const TimeTag& ta : a) {
    const Picoseconds lo = ta.time_ps + tau_lo;
    while (first < b.size() && b[first].time_ps < lo) ++first;
    for (std::size_t j = first; j < b.size(); ++j) {
      const Picoseconds d = b[j].time_ps - ta.time_ps;
      if (d >= tau_hi) break;
      ++h.counts[static_cast<std::size_t>((d - tau_lo) / bin_width_ps)];
    }
  }
  return h;
}

CorrelationHistogram cross_correlate(const TagStream& a, const TagStream& b,
                                     Picoseconds bin_width_ps, Window window) {
  return cross_correlate(std::span<const TimeTag>(a.tags), std::span<const TimeTag>(b.tags),
                         bin_width_ps, window);
}

namespace {

struct Maximum {
  std::size_t index;
  double height;
  double prominence;
  double tau;
};

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

/// Mean-shift centroid of baseline-subtracted counts within ±half bins.
double refine_center(const CorrelationHistogram& h, std::size_t start, std::size_t half,
                     double baseline_per_bin) {
  double center = static_cast<double>(start);
  for (int iter = 0; iter < 8; ++iter) {
    const auto c = static_cast<std::ptrdiff_t>(std::lround(center));
    const auto lo = std::max<std::ptrdiff_t>(0, c - static_cast<std::ptrdiff_t>(half));
    const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h.size()) - 1,
                                             c + static_cast<std::ptrdiff_t>(half));
    double sum = 0.0;
    double moment = 0.0;
    for (auto k = lo; k <= hi; ++k) {
      const double w = static_cast<double>(h.counts[static_cast<std::size_t>(k)]) - baseline_per_bin;
      sum += w;
      moment += w * static_cast<double>(k);
    }
    if (sum <= 0.0) break;
    const double next = moment / sum;
    if (std::abs(next - center) < 1e-3) {
      center = next;
      break;
    }
    center = next;
  }
  return static_cast<double>(h.tau_start_ps) +
         (center + 0.5) * static_cast<double>(h.bin_width_ps);
}

}  // namespace

PeakCandidates find_peak_pair(const CorrelationHistogram& fine, const LocateOptions& options) {
  options.shape.validate();
  const std::size_t n = fine.size();
  if (n < 3) throw Error(ErrorCode::NoPeak, "fine histogram too short to hold peaks");

  auto width = static_cast<std::size_t>(
      std::max<double>(1.0, std::round(options.shape.fwhm_ps() / static_cast<double>(fine.bin_width_ps))));
  width |= 1;
  const std::size_t half = width / 2;

  std::vector<std::uint64_t> prefix(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + fine.counts[k];
  std::vector<double> smooth(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t lo = k >= half ? k - half : 0;
    const std::size_t hi = std::min(n, k + half + 1);
    smooth[k] = static_cast<double>(prefix[hi] - prefix[lo]);
  }

  const double baseline = median(smooth);
  const double threshold = baseline + options.k_sigma * std::sqrt(std::max(baseline, 1.0));

  std::vector<Maximum> maxima;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && smooth[j + 1] == smooth[i]) ++j;
    const bool rises = i == 0 || smooth[i - 1] < smooth[i];
    const bool falls = j + 1 == n || smooth[j + 1] < smooth[j];
    if (rises && falls && smooth[i] > threshold) {
      const double height = smooth[i];
      double left_min = height;
      // Equal heights to the left end the scan, so twin tops on one peak count once.
      for (std::size_t k = i; k-- > 0;) {
        if (smooth[k] >= height) break;
        left_min = std::min(left_min, smooth[k]);
      }
      double right_min = height;
      for (std::size_t k = j + 1; k < n; ++k) {
        if (smooth[k] > height) break;
        right_min = std::min(right_min, smooth[k]);
      }
      const double col = std::max(left_min, right_min);
      const double prominence = height - col;
      if (prominence >= options.k_sigma * std::sqrt(std::max(col, 1.0))) {
        const std::size_t at = (i + j) / 2;
        maxima.push_back({at, height, prominence, fine.bin_center_ps(at)});
      }
    }
    i = j + 1;
  }
  if (maxima.size() < 2) {
    throw Error(ErrorCode::NoPeak, "found " + std::to_string(maxima.size()) +
                                       " significant coincidence peak(s), need 2");
  }
  std::sort(maxima.begin(), maxima.end(), [](const Maximum& x, const Maximum& y) {
    if (x.prominence != y.prominence) return x.prominence > y.prominence;
    return std::abs(x.tau) < std::abs(y.tau);
  });

  const double baseline_per_bin = baseline / static_cast<double>(width);
  const double sigma_bins = options.shape.sigma_ps / static_cast<double>(fine.bin_width_ps);
  const auto refine_half = static_cast<std::size_t>(std::max(1.0, std::round(sigma_bins)));
  Maximum first = maxima[0];
  Maximum second = maxima[1];
  first.tau = refine_center(fine, first.index, refine_half, baseline_per_bin);
  second.tau = refine_center(fine, second.index, refine_half, baseline_per_bin);
  if (first.tau < second.tau) std::swap(first, second);
  return {first.tau, second.tau, first.prominence, second.prominence};
}

PeakSearch locate_peaks(std::span<const TimeTag> a, std::span<const TimeTag> b,
                        const LocateOptions& options, std::optional<Picoseconds> duration_ps) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::NoPeak, "cannot locate peaks in an empty stream");
  if (options.coarse_range_ps <= 0 || options.coarse_bin_ps <= 0 || options.fine_bin_ps <= 0 ||
      options.fine_half_window_ps <= 0) {
    throw Error(ErrorCode::InvalidArgument, "peak search windows must be positive");
  }
  PeakSearch search;
  search.coarse = cross_correlate(a, b, options.coarse_bin_ps,
                                  {-options.coarse_range_ps, options.coarse_range_ps}, duration_ps);
  const auto& counts = search.coarse.counts;
  std::size_t best = 0;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > counts[best] ||
        (counts[k] == counts[best] &&
         std::abs(search.coarse.bin_center_ps(k)) < std::abs(search.coarse.bin_center_ps(best)))) {
      best = k;
    }
  }
  // Integer center keeps the fine grid aligned to whole picoseconds.
  const Picoseconds center = search.coarse.tau_start_ps +
                             static_cast<Picoseconds>(best) * options.coarse_bin_ps +
                             options.coarse_bin_ps / 2;
  search.coarse_center_ps = static_cast<double>(center);
  search.fine = cross_correlate(a, b, options.fine_bin_ps,
                                {center - options.fine_half_window_ps,
                                 center + options.fine_half_window_ps},
                                duration_ps);
  search.candidates = find_peak_pair(search.fine, options);
  return search;
}

PeakCandidates locate_peaks(const TagStream& a, const TagStream& b, const LocateOptions& options) {
  return locate_peaks(std::span<const TimeTag>(a.tags), std::span<const TimeTag>(b.tags), options)
      .candidates;
}

std::vector<double> normalize_g2(const CorrelationHistogram& h, double rate_a_hz,
                                 double rate_b_hz) {
  if (!(rate_a_hz > 0.0) || !(rate_b_hz > 0.0) || h.duration_ps <= 0) {
    throw Error(ErrorCode::NormalizationUndefined,
                "g2 normalization needs positive rates and duration");
  }
  const double expected = rate_a_hz * rate_b_hz * ps_to_seconds(static_cast<double>(h.duration_ps)) *
                          ps_to_seconds(static_cast<double>(h.bin_width_ps));
  std::vector<double> g2(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    g2[k] = static_cast<double>(h.counts[k]) / expected;
  }
  return g2;
}

void write_histogram_csv(std::ostream& out, const CorrelationHistogram& h,
                         const std::vector<double>* g2) {
  out << (g2 ? "tau_ps,counts,g2\n" : "tau_ps,counts\n");
  char buf[96];
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (g2) {
      std::snprintf(buf, sizeof buf, "%.1f,%llu,%.9g\n", h.bin_center_ps(k),
                    static_cast<unsigned long long>(h.counts[k]), (*g2)[k]);
    } else {
      std::snprintf(buf, sizeof buf, "%.1f,%llu\n", h.bin_center_ps(k),
                    static_cast<unsigned long long>(h.counts[k]));
    }
    out << buf;
  }
}

}  // namespace pairsync::xcorr
