#include "pairsync/clocksim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "pairsync/error.hpp"

namespace pairsync::sim {

namespace {

enum StreamId : std::uint64_t {
  kPairsA = 1,
  kPairsB = 2,
  kPhaseA = 3,
  kPhaseB = 4,
  kBackgroundA = 5,
  kBackgroundB = 6,
};

Rng make_rng(std::uint64_t seed, StreamId id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return Rng(seq);
}

Picoseconds floor_div(Picoseconds a, Picoseconds b) {
  Picoseconds q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

Picoseconds quantize(Picoseconds t, Picoseconds q) {
  if (q <= 1) return t;
  return floor_div(t + q / 2, q) * q;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::BadConfig, what);
}

std::vector<double> draw_phase_steps(double sigma_ps, std::size_t n, Rng rng) {
  std::vector<double> phase(n, 0.0);
  if (sigma_ps <= 0.0) return phase;
  std::normal_distribution<double> normal(0.0, sigma_ps);
  for (auto& p : phase) p = normal(rng);
  return phase;
}

}  // namespace

void ClockModel::validate() const {
  require(std::isfinite(b_ps), "clock bias must be finite");
  require(std::abs(d) < 1e-6, "|d| must be below 1e-6");
  require(std::abs(a_per_s) < 1e-12, "|a| must be below 1e-12 per second");
  require(white_phase_sigma_ps >= 0.0, "white phase noise must be non-negative");
}

ChannelModel ChannelModel::from_fibers(
    const std::vector<std::pair<Picoseconds, double>>& fibers, double speed_mps) {
  if (!(speed_mps > 0.0)) throw Error(ErrorCode::BadConfig, "propagation speed must be positive");
  ChannelModel ch;
  ch.schedule.clear();
  for (const auto& [t_switch, length_m] : fibers) {
    const double delay_ps = length_m / speed_mps * 1e12;
    char label[64];
    std::snprintf(label, sizeof label, "L=%gm", length_m);
    ch.schedule.push_back({t_switch, delay_ps, delay_ps, label, length_m});
  }
  ch.validate();
  return ch;
}

void ChannelModel::validate() const {
  require(!schedule.empty(), "channel schedule is empty");
  require(schedule.front().t_switch_ps == 0, "channel schedule must start at t = 0");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    require(schedule[i].delta_ab_ps >= 0.0 && schedule[i].delta_ba_ps >= 0.0,
            "channel delays must be non-negative");
    if (i > 0) {
      require(schedule[i].t_switch_ps > schedule[i - 1].t_switch_ps,
              "channel switch times must be strictly increasing");
    }
  }
  require(transmission_ab >= 0.0 && transmission_ab <= 1.0, "transmission_ab outside [0, 1]");
  require(transmission_ba >= 0.0 && transmission_ba <= 1.0, "transmission_ba outside [0, 1]");
}

void SourceModel::validate() const {
  require(pair_rate_hz >= 0.0 && background_rate_hz >= 0.0, "rates must be non-negative");
  require(local_eff >= 0.0 && local_eff <= 1.0, "local efficiency outside [0, 1]");
  require(remote_eff >= 0.0 && remote_eff <= 1.0, "remote efficiency outside [0, 1]");
  jitter.validate();
}

void ExperimentConfig::validate() const {
  require(duration_ps > 0, "duration must be positive");
  require(phase_step_ps > 0, "phase step interval must be positive");
  require(quantize_ps >= 0, "quantization step must be non-negative");
  clock_a.validate();
  clock_b.validate();
  channel.validate();
  source_a.validate();
  source_b.validate();
}

std::vector<Picoseconds> sample_pair_times(double rate_hz, Picoseconds duration_ps, Rng& rng) {
  if (rate_hz < 0.0) throw Error(ErrorCode::InvalidArgument, "rate must be non-negative");
  std::vector<Picoseconds> times;
  if (rate_hz == 0.0 || duration_ps <= 0) return times;
  times.reserve(static_cast<std::size_t>(rate_hz * ps_to_seconds(duration_ps) * 1.1) + 16);
  std::exponential_distribution<double> gap(rate_hz * 1e-12);
  long double t = gap(rng);
  while (t < static_cast<long double>(duration_ps)) {
    times.push_back(std::min<Picoseconds>(std::llround(t), duration_ps - 1));
    t += gap(rng);
  }
  return times;
}

double sample_jitter(const fit::PeakShape& shape, Rng& rng) {
  shape.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool lorentzian = unit(rng) < shape.f;
  if (lorentzian) {
    const double u = unit(rng);
    const double x = shape.sigma_ps * std::tan(std::numbers::pi * (u - 0.5));
    return std::clamp(x, -kJitterClampPs, kJitterClampPs);
  }
  std::normal_distribution<double> normal(0.0, shape.gaussian_sd_ps());
  return normal(rng);
}

Picoseconds local_clock_reading(const ClockModel& clock, long double true_ps) {
  const long double t_s = true_ps * 1e-12L;
  const long double reading = true_ps + static_cast<long double>(clock.b_ps) +
                              static_cast<long double>(clock.d) * true_ps +
                              static_cast<long double>(clock.a_per_s) * t_s * t_s * 1e12L;
  constexpr long double kLimit = 9.2e18L;
  if (!std::isfinite(static_cast<double>(reading)) || reading > kLimit || reading < -kLimit) {
    throw Error(ErrorCode::InvalidArgument, "clock reading overflows 64-bit picoseconds");
  }
  return std::llroundl(reading);
}

const DelaySegment& segment_at(const ChannelModel& channel, double true_ps) {
  if (channel.schedule.empty() || true_ps < static_cast<double>(channel.schedule.front().t_switch_ps)) {
    throw Error(ErrorCode::InvalidArgument, "time precedes the first channel segment");
  }
  auto it = std::upper_bound(channel.schedule.begin(), channel.schedule.end(), true_ps,
                             [](double t, const DelaySegment& s) {
                               return t < static_cast<double>(s.t_switch_ps);
                             });
  return *std::prev(it);
}

Delays delay_at(const ChannelModel& channel, double true_ps) {
  const auto& seg = segment_at(channel, true_ps);
  return {seg.delta_ab_ps, seg.delta_ba_ps};
}

long double GroundTruth::reading(Party p, long double true_ps) const {
  const ClockModel& clock = p == Party::Alice ? clock_a : clock_b;
  const auto& phase = p == Party::Alice ? phase_a_ps : phase_b_ps;
  const long double t_s = true_ps * 1e-12L;
  long double r = true_ps + static_cast<long double>(clock.b_ps) +
                  static_cast<long double>(clock.d) * true_ps +
                  static_cast<long double>(clock.a_per_s) * t_s * t_s * 1e12L;
  if (!phase.empty() && phase_step_ps > 0) {
    auto k = static_cast<long long>(std::floor(true_ps / phase_step_ps));
    k = std::clamp<long long>(k, 0, static_cast<long long>(phase.size()) - 1);
    r += phase[static_cast<std::size_t>(k)];
  }
  return r;
}

double GroundTruth::offset_at(double true_ps) const {
  return static_cast<double>(reading(Party::Bob, true_ps) - reading(Party::Alice, true_ps));
}

double GroundTruth::tau_ab_at(double true_ps) const {
  return offset_at(true_ps) + delay_at(channel, true_ps).ab_ps;
}

double GroundTruth::tau_ba_at(double true_ps) const {
  return offset_at(true_ps) - delay_at(channel, true_ps).ba_ps;
}

std::string GroundTruth::label_at(double true_ps) const {
  return segment_at(channel, true_ps).label;
}

SimulationResult simulate_two_party(const ExperimentConfig& config) {
  config.validate();

  SimulationResult out;
  out.alice.party = Party::Alice;
  out.bob.party = Party::Bob;
  GroundTruth& truth = out.truth;
  truth.clock_a = config.clock_a;
  truth.clock_b = config.clock_b;
  truth.channel = config.channel;
  truth.phase_step_ps = config.phase_step_ps;
  const auto n_phase = static_cast<std::size_t>(
      (config.duration_ps + config.phase_step_ps - 1) / config.phase_step_ps);
  truth.phase_a_ps = draw_phase_steps(config.clock_a.white_phase_sigma_ps, n_phase,
                                      make_rng(config.seed, kPhaseA));
  truth.phase_b_ps = draw_phase_steps(config.clock_b.white_phase_sigma_ps, n_phase,
                                      make_rng(config.seed, kPhaseB));

  auto stamp = [&](Party p, long double true_ps) {
    const long double r = truth.reading(p, true_ps);
    if (r > 9.2e18L || r < -9.2e18L) {
      throw Error(ErrorCode::InvalidArgument, "clock reading overflows 64-bit picoseconds");
    }
    return TimeTag{quantize(std::llroundl(r), config.quantize_ps), kLocalDetector};
  };
  auto stream_of = [&](Party p) -> TagStream& { return p == Party::Alice ? out.alice : out.bob; };

  for (Party origin : {Party::Alice, Party::Bob}) {
    const SourceModel& src = origin == Party::Alice ? config.source_a : config.source_b;
    Rng rng = make_rng(config.seed, origin == Party::Alice ? kPairsA : kPairsB);
    const auto emissions = sample_pair_times(src.pair_rate_hz, config.duration_ps, rng);
    const double transmission = origin == Party::Alice ? config.channel.transmission_ab
                                                       : config.channel.transmission_ba;
    fit::PeakShape per_detector = src.jitter;
    per_detector.sigma_ps /= std::numbers::sqrt2;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::uint64_t pairs = 0;
    for (const Picoseconds t0 : emissions) {
      const bool local_hit = unit(rng) < src.local_eff;
      const bool remote_hit = unit(rng) < src.remote_eff * transmission;
      double jitter_local = 0.0;
      double jitter_remote = 0.0;
      if (src.jitter_mode == JitterMode::CombinedSplit) {
        const double j = sample_jitter(src.jitter, rng);
        jitter_local = -0.5 * j;
        jitter_remote = 0.5 * j;
      } else {
        jitter_local = sample_jitter(per_detector, rng);
        jitter_remote = sample_jitter(per_detector, rng);
      }
      const Delays delays = delay_at(config.channel, static_cast<double>(t0));
      const double delay = origin == Party::Alice ? delays.ab_ps : delays.ba_ps;

      if (local_hit) {
        stream_of(origin).tags.push_back(stamp(origin, t0 + static_cast<long double>(jitter_local)));
      }
      if (remote_hit) {
        const Party dest = other(origin);
        stream_of(dest).tags.push_back(
            stamp(dest, t0 + static_cast<long double>(delay) + jitter_remote));
      }
      if (local_hit && remote_hit) ++pairs;
    }
    (origin == Party::Alice ? truth.emitted_a : truth.emitted_b) = emissions.size();
    (origin == Party::Alice ? truth.detected_pairs_a : truth.detected_pairs_b) = pairs;
  }

  for (Party p : {Party::Alice, Party::Bob}) {
    const SourceModel& src = p == Party::Alice ? config.source_a : config.source_b;
    Rng rng = make_rng(config.seed, p == Party::Alice ? kBackgroundA : kBackgroundB);
    for (const Picoseconds t : sample_pair_times(src.background_rate_hz, config.duration_ps, rng)) {
      stream_of(p).tags.push_back(stamp(p, t));
    }
  }

  auto by_time = [](const TimeTag& x, const TimeTag& y) {
    return x.time_ps < y.time_ps || (x.time_ps == y.time_ps && x.channel < y.channel);
  };
  std::sort(out.alice.tags.begin(), out.alice.tags.end(), by_time);
  std::sort(out.bob.tags.begin(), out.bob.tags.end(), by_time);

  std::vector<Picoseconds> edges{0, config.duration_ps};
  for (const auto& seg : config.channel.schedule) {
    if (seg.t_switch_ps < config.duration_ps) edges.push_back(seg.t_switch_ps);
  }
  for (std::size_t k = 1; k < n_phase; ++k) {
    edges.push_back(static_cast<Picoseconds>(k) * config.phase_step_ps);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const double mid = 0.5 * static_cast<double>(edges[i] + edges[i + 1]);
    const auto& seg = segment_at(config.channel, static_cast<double>(edges[i]));
    truth.segments.push_back({edges[i], edges[i + 1], truth.offset_at(mid), seg.delta_ab_ps,
                              seg.delta_ba_ps, seg.label});
  }
  return out;
}

}  // namespace pairsync::sim
