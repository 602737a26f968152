#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pairsync/core_time.hpp"
#include "pairsync/peak_shape.hpp"

namespace pairsync::sim {

using Rng = std::mt19937_64;

/// Local clock relative to true time: reading = t + b + d·t + a·t²
/// (t in seconds for the aging term), plus a piecewise-constant white phase
/// step of standard deviation `white_phase_sigma_ps`.
struct ClockModel {
  double b_ps = 0.0;
  double d = 0.0;
  double a_per_s = 0.0;
  double white_phase_sigma_ps = 0.0;

  void validate() const;
};

struct DelaySegment {
  Picoseconds t_switch_ps = 0;
  double delta_ab_ps = 0.0;
  double delta_ba_ps = 0.0;
  std::string label;
  /// Path length when the segment was built from a fiber length, else < 0.
  double length_m = -1.0;
};

inline constexpr double kFiberSpeedMps = 2.04e8;

/// Shortest fiber of the bench setup; the default channel.
inline constexpr double kDefaultFiberM = 1.7;

struct ChannelModel {
  std::vector<DelaySegment> schedule{DelaySegment{0, kDefaultFiberM / kFiberSpeedMps * 1e12,
                                                  kDefaultFiberM / kFiberSpeedMps * 1e12,
                                                  "L=1.7m", kDefaultFiberM}};
  double transmission_ab = 1.0;
  double transmission_ba = 1.0;

  /// Symmetric schedule from (switch time, fiber length) pairs.
  static ChannelModel from_fibers(const std::vector<std::pair<Picoseconds, double>>& fibers,
                                  double speed_mps = kFiberSpeedMps);

  void validate() const;
};

enum class JitterMode {
  /// One combined draw J ~ V per pair, split as -J/2 local and +J/2 remote,
  /// so the detection-time difference follows V exactly.
  CombinedSplit,
  /// Independent draws per detection from the shape with sigma / sqrt(2).
  PerDetector,
};

struct SourceModel {
  double pair_rate_hz = 200.0;
  double local_eff = 1.0;
  double remote_eff = 1.0;
  double background_rate_hz = 500.0;
  fit::PeakShape jitter;
  JitterMode jitter_mode = JitterMode::CombinedSplit;

  void validate() const;
};

struct ExperimentConfig {
  Picoseconds duration_ps = 100 * kPsPerSecond;
  std::uint64_t seed = 1;
  ClockModel clock_a;
  ClockModel clock_b;
  ChannelModel channel;
  SourceModel source_a;
  SourceModel source_b;
  /// Tagger granularity; 0 or 1 keeps 1 ps resolution.
  Picoseconds quantize_ps = 0;
  /// Interval on which the white phase steps are redrawn.
  Picoseconds phase_step_ps = 2 * kPsPerSecond;

  void validate() const;
};

struct TruthSegment {
  Picoseconds t_start_ps = 0;
  Picoseconds t_end_ps = 0;
  double delta_ps = 0.0;  ///< true offset at the segment midpoint
  double delta_ab_ps = 0.0;
  double delta_ba_ps = 0.0;
  std::string label;
};

/// What the simulator knows and the protocol has to recover.
struct GroundTruth {
  ClockModel clock_a;
  ClockModel clock_b;
  ChannelModel channel;
  Picoseconds phase_step_ps = 0;
  std::vector<double> phase_a_ps;
  std::vector<double> phase_b_ps;
  std::vector<TruthSegment> segments;
  std::uint64_t emitted_a = 0;
  std::uint64_t emitted_b = 0;
  std::uint64_t detected_pairs_a = 0;
  std::uint64_t detected_pairs_b = 0;

  /// Local reading of a party's clock, including its phase step.
  long double reading(Party p, long double true_ps) const;
  /// δ(t): Bob's reading minus Alice's at true time t.
  double offset_at(double true_ps) const;
  /// Expected correlation peak positions at true time t.
  double tau_ab_at(double true_ps) const;
  double tau_ba_at(double true_ps) const;
  /// Segment label active at t (empty when the schedule has no labels).
  std::string label_at(double true_ps) const;
};

struct SimulationResult {
  TagStream alice;
  TagStream bob;
  GroundTruth truth;
};

/// Homogeneous Poisson process on [0, duration), in integer picoseconds.
std::vector<Picoseconds> sample_pair_times(double rate_hz, Picoseconds duration_ps, Rng& rng);

/// One draw from the pseudo-Voigt mixture; Lorentzian draws are clamped to
/// ±kJitterClampPs.
inline constexpr double kJitterClampPs = 50.0 * kPsPerNs;
double sample_jitter(const fit::PeakShape& shape, Rng& rng);

/// Clock model without phase noise, rounded to 1 ps. Throws
/// InvalidArgument if the reading does not fit in 64 bits.
Picoseconds local_clock_reading(const ClockModel& clock, long double true_ps);

struct Delays {
  double ab_ps = 0.0;
  double ba_ps = 0.0;
};

/// Piecewise-constant delay lookup on half-open schedule segments.
Delays delay_at(const ChannelModel& channel, double true_ps);
const DelaySegment& segment_at(const ChannelModel& channel, double true_ps);

/// Deterministic for a fixed config (including seed).
SimulationResult simulate_two_party(const ExperimentConfig& config);

// ---- config files -------------------------------------------------------

inline constexpr int kConfigVersion = 1;

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
void write_config(const ExperimentConfig& config, std::ostream& out);

}  // namespace pairsync::sim
