#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "pairsync/clocksim.hpp"
#include "pairsync/error.hpp"

namespace pairsync::sim {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::BadConfig, key + ": expected a number, got '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw Error(ErrorCode::BadConfig, key + ": expected an unsigned integer, got '" + value + "'");
  }
  return v;
}

Picoseconds seconds_field(const std::string& key, const std::string& value) {
  return static_cast<Picoseconds>(std::llround(to_double(key, value) * 1e12));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(const std::string&, const std::string&)>;

void add_clock(std::map<std::string, Setter>& keys, const std::string& prefix, ClockModel& c) {
  keys[prefix + ".bias_ps"] = [&c](auto& k, auto& v) { c.b_ps = to_double(k, v); };
  keys[prefix + ".freq_offset"] = [&c](auto& k, auto& v) { c.d = to_double(k, v); };
  keys[prefix + ".aging_per_s"] = [&c](auto& k, auto& v) { c.a_per_s = to_double(k, v); };
  keys[prefix + ".white_phase_sigma_ps"] = [&c](auto& k, auto& v) {
    c.white_phase_sigma_ps = to_double(k, v);
  };
}

void add_source(std::map<std::string, Setter>& keys, const std::string& prefix, SourceModel& s) {
  keys[prefix + ".pair_rate_hz"] = [&s](auto& k, auto& v) { s.pair_rate_hz = to_double(k, v); };
  keys[prefix + ".local_eff"] = [&s](auto& k, auto& v) { s.local_eff = to_double(k, v); };
  keys[prefix + ".remote_eff"] = [&s](auto& k, auto& v) { s.remote_eff = to_double(k, v); };
  keys[prefix + ".background_rate_hz"] = [&s](auto& k, auto& v) {
    s.background_rate_hz = to_double(k, v);
  };
  keys[prefix + ".jitter_f"] = [&s](auto& k, auto& v) { s.jitter.f = to_double(k, v); };
  keys[prefix + ".jitter_sigma_ps"] = [&s](auto& k, auto& v) {
    s.jitter.sigma_ps = to_double(k, v);
  };
  keys[prefix + ".jitter_mode"] = [&s](auto& k, auto& v) {
    if (v == "combined") {
      s.jitter_mode = JitterMode::CombinedSplit;
    } else if (v == "per_detector") {
      s.jitter_mode = JitterMode::PerDetector;
    } else {
      throw Error(ErrorCode::BadConfig, k + ": expected 'combined' or 'per_detector'");
    }
  };
}

void write_clock(std::ostream& out, const std::string& prefix, const ClockModel& c) {
  out << prefix << ".bias_ps = " << fmt(c.b_ps) << '\n'
      << prefix << ".freq_offset = " << fmt(c.d) << '\n'
      << prefix << ".aging_per_s = " << fmt(c.a_per_s) << '\n'
      << prefix << ".white_phase_sigma_ps = " << fmt(c.white_phase_sigma_ps) << '\n';
}

void write_source(std::ostream& out, const std::string& prefix, const SourceModel& s) {
  out << prefix << ".pair_rate_hz = " << fmt(s.pair_rate_hz) << '\n'
      << prefix << ".local_eff = " << fmt(s.local_eff) << '\n'
      << prefix << ".remote_eff = " << fmt(s.remote_eff) << '\n'
      << prefix << ".background_rate_hz = " << fmt(s.background_rate_hz) << '\n'
      << prefix << ".jitter_f = " << fmt(s.jitter.f) << '\n'
      << prefix << ".jitter_sigma_ps = " << fmt(s.jitter.sigma_ps) << '\n'
      << prefix << ".jitter_mode = "
      << (s.jitter_mode == JitterMode::CombinedSplit ? "combined" : "per_detector") << '\n';
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  double speed_mps = kFiberSpeedMps;
  std::vector<std::pair<Picoseconds, double>> fibers;
  std::vector<DelaySegment> segments;

  std::map<std::string, Setter> keys;
  keys["config_version"] = [](auto& k, auto& v) {
    if (to_u64(k, v) != kConfigVersion) {
      throw Error(ErrorCode::BadConfig, "unsupported config_version " + v);
    }
  };
  keys["duration_s"] = [&](auto& k, auto& v) { cfg.duration_ps = seconds_field(k, v); };
  keys["seed"] = [&](auto& k, auto& v) { cfg.seed = to_u64(k, v); };
  keys["quantize_ps"] = [&](auto& k, auto& v) {
    cfg.quantize_ps = static_cast<Picoseconds>(to_u64(k, v));
  };
  keys["phase_step_s"] = [&](auto& k, auto& v) { cfg.phase_step_ps = seconds_field(k, v); };
  add_clock(keys, "clock_a", cfg.clock_a);
  add_clock(keys, "clock_b", cfg.clock_b);
  add_source(keys, "source_a", cfg.source_a);
  add_source(keys, "source_b", cfg.source_b);
  keys["channel.transmission_ab"] = [&](auto& k, auto& v) {
    cfg.channel.transmission_ab = to_double(k, v);
  };
  keys["channel.transmission_ba"] = [&](auto& k, auto& v) {
    cfg.channel.transmission_ba = to_double(k, v);
  };
  keys["channel.speed_mps"] = [&](auto& k, auto& v) { speed_mps = to_double(k, v); };
  keys["channel.fiber"] = [&](auto& k, auto& v) {
    std::istringstream fields(v);
    std::string t, len;
    if (!(fields >> t >> len)) throw Error(ErrorCode::BadConfig, k + ": expected '<t_s> <L_m>'");
    fibers.emplace_back(seconds_field(k, t), to_double(k, len));
  };
  keys["channel.segment"] = [&](auto& k, auto& v) {
    std::istringstream fields(v);
    std::string t, ab, ba, label;
    if (!(fields >> t >> ab >> ba)) {
      throw Error(ErrorCode::BadConfig, k + ": expected '<t_s> <delta_ab_ps> <delta_ba_ps> [label [L_m]]'");
    }
    std::string length;
    fields >> label >> length;
    if (label == "-") label.clear();
    segments.push_back({seconds_field(k, t), to_double(k, ab), to_double(k, ba), label,
                        length.empty() ? -1.0 : to_double(k, length)});
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = keys.find(key);
    if (it == keys.end()) {
      throw Error(ErrorCode::BadConfig,
                  "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    it->second(key, value);
  }

  if (!fibers.empty() || !segments.empty()) {
    const double t_ab = cfg.channel.transmission_ab;
    const double t_ba = cfg.channel.transmission_ba;
    ChannelModel ch = fibers.empty() ? ChannelModel{} : ChannelModel::from_fibers(fibers, speed_mps);
    if (fibers.empty()) ch.schedule.clear();
    ch.schedule.insert(ch.schedule.end(), segments.begin(), segments.end());
    std::stable_sort(ch.schedule.begin(), ch.schedule.end(),
                     [](const auto& x, const auto& y) { return x.t_switch_ps < y.t_switch_ps; });
    ch.transmission_ab = t_ab;
    ch.transmission_ba = t_ba;
    cfg.channel = std::move(ch);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  return parse_config(in);
}

void write_config(const ExperimentConfig& cfg, std::ostream& out) {
  out << "# pairsync experiment config\n"
      << "config_version = " << kConfigVersion << '\n'
      << "duration_s = " << fmt(ps_to_seconds(static_cast<double>(cfg.duration_ps))) << '\n'
      << "seed = " << cfg.seed << '\n'
      << "quantize_ps = " << cfg.quantize_ps << '\n'
      << "phase_step_s = " << fmt(ps_to_seconds(static_cast<double>(cfg.phase_step_ps))) << '\n';
  write_clock(out, "clock_a", cfg.clock_a);
  write_clock(out, "clock_b", cfg.clock_b);
  write_source(out, "source_a", cfg.source_a);
  write_source(out, "source_b", cfg.source_b);
  out << "channel.transmission_ab = " << fmt(cfg.channel.transmission_ab) << '\n'
      << "channel.transmission_ba = " << fmt(cfg.channel.transmission_ba) << '\n';
  for (const auto& seg : cfg.channel.schedule) {
    out << "channel.segment = " << fmt(ps_to_seconds(static_cast<double>(seg.t_switch_ps))) << ' '
        << fmt(seg.delta_ab_ps) << ' ' << fmt(seg.delta_ba_ps);
    if (!seg.label.empty() || seg.length_m >= 0.0) {
      out << ' ' << (seg.label.empty() ? "-" : seg.label);
    }
    if (seg.length_m >= 0.0) out << ' ' << fmt(seg.length_m);
    out << '\n';
  }
}

}  // namespace pairsync::sim
