#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "pairsync/clocksim.hpp"
#include "pairsync/core_time.hpp"

namespace testsupport {

using pairsync::Picoseconds;
using pairsync::TagStream;
using pairsync::TimeTag;

inline TagStream stream_of(pairsync::Party p, std::vector<Picoseconds> times) {
  TagStream s;
  s.party = p;
  for (auto t : times) s.tags.push_back({t, pairsync::kLocalDetector});
  return s;
}

inline std::vector<Picoseconds> random_times(std::mt19937_64& rng, std::size_t n, Picoseconds lo,
                                             Picoseconds hi) {
  std::uniform_int_distribution<Picoseconds> u(lo, hi);
  std::vector<Picoseconds> v(n);
  for (auto& t : v) t = u(rng);
  std::sort(v.begin(), v.end());
  return v;
}

/// counts[k] = #{(i, j) : b_j − a_i in [tau_min + kΔ, tau_min + (k+1)Δ)} by exhaustive pairs.
inline std::vector<std::uint64_t> brute_force_histogram(const TagStream& a, const TagStream& b,
                                                        Picoseconds bin, Picoseconds tau_min,
                                                        std::size_t n_bins) {
  std::vector<std::uint64_t> counts(n_bins, 0);
  for (const auto& x : a.tags) {
    for (const auto& y : b.tags) {
      const Picoseconds d = y.time_ps - x.time_ps - tau_min;
      if (d < 0) continue;
      const auto k = static_cast<std::size_t>(d / bin);
      if (k < n_bins) ++counts[k];
    }
  }
  return counts;
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Two parties sharing a perfect clock except for Bob's bias, with fixed
/// symmetric delays.
inline pairsync::sim::ExperimentConfig simple_config(double duration_s, std::uint64_t seed,
                                                     double delta_ps, double delay_ps) {
  pairsync::sim::ExperimentConfig cfg;
  cfg.duration_ps = static_cast<Picoseconds>(std::llround(duration_s * 1e12));
  cfg.seed = seed;
  cfg.clock_b.b_ps = delta_ps;
  cfg.channel.schedule = {{0, delay_ps, delay_ps, "", -1.0}};
  return cfg;
}

}  // namespace testsupport
