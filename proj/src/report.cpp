#include "pairsync/report.hpp"

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pairsync/error.hpp"

namespace pairsync::report {

namespace {

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::BadRecord, "line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

Json to_json(const fit::DoublePeakFit& f) {
  Json cov = Json::array();
  for (int i = 0; i < fit::kNumParams; ++i) {
    Json row = Json::array();
    for (int j = 0; j < fit::kNumParams; ++j) row.push_back(f.covariance(i, j));
    cov.push_back(row);
  }
  return Json{{"a0", f.a0},
              {"a1", f.a1},
              {"a2", f.a2},
              {"tau_ab_ps", f.tau_ab_ps},
              {"tau_ba_ps", f.tau_ba_ps},
              {"sigma_tau_ab_ps", f.sigma(fit::kTauAB)},
              {"sigma_tau_ba_ps", f.sigma(fit::kTauBA)},
              {"chi2_red", f.chi2_red},
              {"iterations", f.iterations},
              {"n_bins", f.n_bins},
              {"parameter_order", {"a0", "a1", "a2", "tau_ab_ps", "tau_ba_ps"}},
              {"covariance", cov}};
}

Json to_json(const fit::SyncEstimate& e) {
  return Json{{"delta_ps", e.delta_ps},
              {"sigma_delta_ps", e.sigma_delta_ps},
              {"round_trip_ps", e.round_trip_ps},
              {"sigma_round_trip_ps", e.sigma_round_trip_ps},
              {"block_index", e.block_index},
              {"epoch_mid_ps", e.epoch_mid_ps}};
}

Json to_json(const sync::DriftFit& d) {
  Json residuals = Json::array();
  for (std::size_t i = 0; i < d.residuals_ps.size(); ++i) {
    residuals.push_back({{"block_index", d.block_indices[i]},
                         {"epoch_s", d.epochs_s[i]},
                         {"residual_ps", d.residuals_ps[i]}});
  }
  return Json{{"model", "delta(t) = a*t^2 + d*t + b, t in s"},
              {"a_per_s", d.a_per_s},
              {"sigma_a_per_s", d.sigma_a_per_s},
              {"d", d.d},
              {"sigma_d", d.sigma_d},
              {"b_ps", d.b_ps},
              {"sigma_b_ps", d.sigma_b_ps},
              {"n", d.residuals_ps.size()},
              {"residuals", residuals}};
}

Json to_json(const sync::StabilityReport& r) {
  Json adev = Json::array();
  for (const auto& [tau, v] : r.adev) adev.push_back({{"tau_s", tau}, {"adev", number_or_null(v)}});
  Json tdev = Json::array();
  for (const auto& [tau, v] : r.tdev) tdev.push_back({{"tau_s", tau}, {"tdev_ps", number_or_null(v)}});
  return Json{{"tau0_s", r.tau0_s},
              {"residual_std_ps", r.residual_std_ps},
              {"adev", adev},
              {"tdev", tdev}};
}

Json to_json(const sim::GroundTruth& t) {
  auto clock = [](const sim::ClockModel& c) {
    return Json{{"bias_ps", c.b_ps},
                {"freq_offset", c.d},
                {"aging_per_s", c.a_per_s},
                {"white_phase_sigma_ps", c.white_phase_sigma_ps}};
  };
  Json segments = Json::array();
  for (const auto& s : t.segments) {
    segments.push_back({{"t_start_ps", s.t_start_ps},
                        {"t_end_ps", s.t_end_ps},
                        {"delta_ps", s.delta_ps},
                        {"delta_ab_ps", s.delta_ab_ps},
                        {"delta_ba_ps", s.delta_ba_ps},
                        {"label", s.label}});
  }
  return Json{{"clock_a", clock(t.clock_a)},
              {"clock_b", clock(t.clock_b)},
              {"phase_step_ps", t.phase_step_ps},
              {"emitted_a", t.emitted_a},
              {"emitted_b", t.emitted_b},
              {"detected_pairs_a", t.detected_pairs_a},
              {"detected_pairs_b", t.detected_pairs_b},
              {"segments", segments}};
}

Json to_json(const std::vector<sync::SegmentSummary>& segments) {
  Json out = Json::array();
  for (const auto& s : segments) {
    out.push_back({{"label", s.label},
                   {"first_block", s.first_block},
                   {"n", s.n},
                   {"mean_delta_ps", s.mean_delta_ps},
                   {"std_delta_ps", number_or_null(s.std_delta_ps)},
                   {"mean_round_trip_ps", s.mean_round_trip_ps}});
  }
  return out;
}

std::vector<sim::TruthSegment> segments_from_json(const Json& truth) {
  std::vector<sim::TruthSegment> out;
  try {
    for (const auto& s : truth.at("segments")) {
      sim::TruthSegment seg;
      seg.t_start_ps = s.at("t_start_ps").get<Picoseconds>();
      seg.t_end_ps = s.at("t_end_ps").get<Picoseconds>();
      seg.delta_ps = s.at("delta_ps").get<double>();
      seg.delta_ab_ps = s.at("delta_ab_ps").get<double>();
      seg.delta_ba_ps = s.at("delta_ba_ps").get<double>();
      seg.label = s.at("label").get<std::string>();
      out.push_back(std::move(seg));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadRecord, std::string("malformed ground truth: ") + e.what());
  }
  return out;
}

void label_blocks(sync::SyncSeries& series, const std::vector<sim::TruthSegment>& segments) {
  for (auto& b : series.blocks) {
    for (const auto& s : segments) {
      if (b.epoch_mid_ps >= s.t_start_ps && b.epoch_mid_ps < s.t_end_ps) {
        b.label = s.label;
        break;
      }
    }
  }
}

void write_series_csv(std::ostream& out, const sync::SyncSeries& series) {
  out << "block_epoch_s,delta_ps,sigma_ps,round_trip_ps,segment_label,block_index,status\n";
  for (const auto& b : series.blocks) {
    out << fmt(ps_to_seconds(static_cast<double>(b.epoch_mid_ps))) << ',';
    if (b.estimate) {
      out << fmt(b.estimate->delta_ps) << ',' << fmt(b.estimate->sigma_delta_ps) << ','
          << fmt(b.estimate->round_trip_ps);
    } else {
      out << ",,";
    }
    out << ',' << quote_csv(b.label) << ',' << b.block_index << ','
        << (b.estimate ? std::string("ok") : std::string(to_string(*b.failure))) << '\n';
  }
}

sync::SyncSeries read_series_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SeriesTooShort, "series file is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int c_epoch = column("block_epoch_s");
  const int c_delta = column("delta_ps");
  const int c_sigma = column("sigma_ps");
  const int c_rt = column("round_trip_ps");
  const int c_label = column("segment_label");
  const int c_index = column("block_index");
  const int c_status = column("status");
  if (c_epoch < 0 || c_delta < 0 || c_sigma < 0) {
    throw Error(ErrorCode::BadRecord, "series header needs block_epoch_s, delta_ps and sigma_ps");
  }

  sync::SyncSeries series;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) {
      throw Error(ErrorCode::BadRecord, "line " + std::to_string(lineno) + ": missing fields");
    }
    sync::BlockResult b;
    const double epoch_s = parse_double(f[c_epoch], lineno);
    b.epoch_mid_ps = static_cast<Picoseconds>(std::llround(seconds_to_ps(epoch_s)));
    b.block_index = c_index >= 0 ? static_cast<std::uint64_t>(parse_double(f[c_index], lineno))
                                 : series.blocks.size();
    if (c_label >= 0) b.label = f[c_label];
    if (!f[c_delta].empty()) {
      fit::SyncEstimate e;
      e.delta_ps = parse_double(f[c_delta], lineno);
      e.sigma_delta_ps = f[c_sigma].empty() ? 0.0 : parse_double(f[c_sigma], lineno);
      e.round_trip_ps = c_rt >= 0 && !f[c_rt].empty() ? parse_double(f[c_rt], lineno) : 0.0;
      e.block_index = b.block_index;
      e.epoch_mid_ps = b.epoch_mid_ps;
      b.estimate = e;
    } else {
      b.failure = ErrorCode::NoPeak;
      if (c_status >= 0) {
        for (int c = 0; c <= static_cast<int>(ErrorCode::PeerDisconnected); ++c) {
          if (to_string(static_cast<ErrorCode>(c)) == f[c_status]) b.failure = static_cast<ErrorCode>(c);
        }
      }
      b.failure_message = "gap in series file";
    }
    series.blocks.push_back(std::move(b));
  }
  // Block k is centered on (k + 1/2)·T.
  for (const auto& b : series.blocks) {
    const double t = static_cast<double>(b.epoch_mid_ps) / (static_cast<double>(b.block_index) + 0.5);
    series.block_ps = static_cast<Picoseconds>(std::llround(t));
    break;
  }
  return series;
}

Json to_json(const RunManifest& m) {
  return Json{{"tool", "pairsync"},
              {"version", kVersion},
              {"command", m.command},
              {"argv", m.argv},
              {"config_path", m.config_path},
              {"config", m.config_text},
              {"seed", m.seed},
              {"parameters", m.parameters},
              {"outputs", m.outputs},
              {"libraries",
               {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
}

void write_json_file(const std::string& path, const Json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << std::setw(2) << doc << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadRecord, path + ": " + e.what());
  }
}

}  // namespace pairsync::report
