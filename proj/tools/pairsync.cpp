#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "pairsync/clocksim.hpp"
#include "pairsync/error.hpp"
#include "pairsync/pairwire.hpp"
#include "pairsync/peak_shape.hpp"
#include "pairsync/peakfit.hpp"
#include "pairsync/report.hpp"
#include "pairsync/syncpipe.hpp"
#include "pairsync/xcorr.hpp"

namespace fs = std::filesystem;
using namespace pairsync;
using report::Json;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kFit = 3 };

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return kUsage;
    case ErrorCode::NoPeak:
    case ErrorCode::NotConverged:
    case ErrorCode::DegenerateOverlap:
    case ErrorCode::TrackingFailed:
    case ErrorCode::RankDeficient:
      return kFit;
    default:
      return kData;
  }
}

struct Common {
  std::string out_dir = ".";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  double ta_s = 20.0;
  Picoseconds bin_ps = 16;
  unsigned threads = 0;
};

std::string path_in(const Common& c, const std::string& name) { return (fs::path(c.out_dir) / name).string(); }

class Run {
 public:
  Run(std::string command, const std::vector<std::string>& argv, const Common& common)
      : common_(common) {
    manifest_.command = std::move(command);
    manifest_.argv = argv;
    manifest_.config_path = common.config_path;
  }

  report::RunManifest& manifest() { return manifest_; }

  std::string output(const std::string& name) {
    manifest_.outputs.push_back(name);
    return path_in(common_, name);
  }

  /// Must precede every other write of the command.
  void write_manifest() {
    std::error_code ec;
    fs::create_directories(common_.out_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + common_.out_dir + ": " + ec.message());
    report::write_json_file(path_in(common_, "manifest.json"), report::to_json(manifest_));
  }

 private:
  const Common& common_;
  report::RunManifest manifest_;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  return out;
}

sim::ExperimentConfig effective_config(const Common& c) {
  sim::ExperimentConfig cfg = c.config_path.empty() ? sim::ExperimentConfig{} : sim::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::string config_text(const sim::ExperimentConfig& cfg) {
  std::ostringstream os;
  sim::write_config(cfg, os);
  return os.str();
}

sync::TrackOptions track_options(const Common& c) {
  if (!(c.ta_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "--ta must be positive");
  if (c.bin_ps <= 0) throw Error(ErrorCode::InvalidArgument, "--bin-ps must be positive");
  sync::TrackOptions o;
  o.block_ps = static_cast<Picoseconds>(std::llround(seconds_to_ps(c.ta_s)));
  o.locate.fine_bin_ps = c.bin_ps;
  o.threads = c.threads;
  // The Bob window must not reach past the neighbouring blocks.
  o.locate.coarse_range_ps = std::min(o.locate.coarse_range_ps, o.block_ps);
  return o;
}

Json options_json(const sync::TrackOptions& o) {
  return Json{{"block_ps", o.block_ps},
              {"shape_f", o.shape.f},
              {"shape_sigma_ps", o.shape.sigma_ps},
              {"coarse_bin_ps", o.locate.coarse_bin_ps},
              {"coarse_range_ps", o.locate.coarse_range_ps},
              {"fine_bin_ps", o.locate.fine_bin_ps},
              {"fine_half_window_ps", o.locate.fine_half_window_ps},
              {"k_sigma", o.locate.k_sigma},
              {"fit_margin_ps", o.fit.margin_ps}};
}

TagStream load_nonempty(const std::string& path) {
  TagStream s = read_ptag_file(path);
  if (s.empty()) throw Error(ErrorCode::EmptyWindow, path + " holds no tags");
  return s;
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "expected host:port, got '" + s + "'");
  const std::string host = s.substr(0, colon);
  const std::string port_s = s.substr(colon + 1);
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_s, &used);
    if (used != port_s.size()) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "bad port in '" + s + "'");
  return {host.empty() ? "127.0.0.1" : host, static_cast<std::uint16_t>(port)};
}

// ---- subcommands --------------------------------------------------------

int cmd_simulate(Run& run, const Common& c) {
  const auto cfg = effective_config(c);
  run.manifest().seed = cfg.seed;
  run.manifest().config_text = config_text(cfg);
  const auto alice_path = run.output("alice.ptag");
  const auto bob_path = run.output("bob.ptag");
  const auto truth_path = run.output("truth.json");
  run.write_manifest();

  const auto sim = sim::simulate_two_party(cfg);
  write_ptag_file(sim.alice, alice_path);
  write_ptag_file(sim.bob, bob_path);
  report::write_json_file(truth_path, report::to_json(sim.truth));
  std::cout << "alice " << sim.alice.size() << " tags, bob " << sim.bob.size() << " tags\n";
  return kOk;
}

struct CorrelateArgs {
  std::string alice;
  std::string bob;
  std::optional<Picoseconds> tau_min;
  std::optional<Picoseconds> tau_max;
};

int cmd_correlate(Run& run, const Common& c, const CorrelateArgs& a) {
  const auto opts = track_options(c);
  run.manifest().parameters = options_json(opts);
  const auto hist_path = run.output("histogram.csv");
  const bool explicit_window = a.tau_min || a.tau_max;
  if (explicit_window && !(a.tau_min && a.tau_max)) {
    throw Error(ErrorCode::InvalidArgument, "--tau-min-ps and --tau-max-ps go together");
  }
  const auto coarse_path = explicit_window ? std::string() : run.output("coarse.csv");
  const auto peaks_path = explicit_window ? std::string() : run.output("peaks.json");
  run.write_manifest();

  const TagStream alice = load_nonempty(a.alice);
  const TagStream bob = load_nonempty(a.bob);

  auto write_hist = [](const std::string& path, const xcorr::CorrelationHistogram& h) {
    auto out = open_out(path);
    const double t = ps_to_seconds(static_cast<double>(h.duration_ps));
    std::vector<double> g2;
    if (t > 0.0 && h.n_a > 0 && h.n_b > 0) {
      g2 = xcorr::normalize_g2(h, static_cast<double>(h.n_a) / t, static_cast<double>(h.n_b) / t);
    }
    xcorr::write_histogram_csv(out, h, g2.empty() ? nullptr : &g2);
  };

  if (explicit_window) {
    const auto h = xcorr::cross_correlate(alice.tags, bob.tags, c.bin_ps, {*a.tau_min, *a.tau_max});
    write_hist(hist_path, h);
    std::cout << h.size() << " bins, " << h.total() << " coincidences\n";
    return kOk;
  }

  auto locate = opts.locate;
  locate.shape = opts.shape;
  const auto search = xcorr::locate_peaks(alice.tags, bob.tags, locate);
  write_hist(hist_path, search.fine);
  write_hist(coarse_path, search.coarse);
  Json peaks{{"tau_right_ps", search.candidates.tau_right_ps},
             {"tau_left_ps", search.candidates.tau_left_ps},
             {"prominence_right", search.candidates.prominence_right},
             {"prominence_left", search.candidates.prominence_left},
             {"coarse_center_ps", search.coarse_center_ps}};
  const auto f = fit::fit_double_peak(search.fine, opts.shape, search.candidates, opts.fit);
  peaks["fit"] = report::to_json(f);
  peaks["estimate"] = report::to_json(fit::estimate_sync(f));
  report::write_json_file(peaks_path, peaks);
  std::cout << "delta_ps " << peaks["estimate"]["delta_ps"] << " round_trip_ps "
            << peaks["estimate"]["round_trip_ps"] << '\n';
  return kOk;
}

struct TrackArgs {
  std::string alice;
  std::string bob;
  std::string truth;
};

int cmd_track(Run& run, const Common& c, const TrackArgs& a) {
  const auto opts = track_options(c);
  run.manifest().parameters = options_json(opts);
  const auto series_path = run.output("series.csv");
  const auto segments_path = run.output("segments.json");
  run.write_manifest();

  const TagStream alice = load_nonempty(a.alice);
  const TagStream bob = load_nonempty(a.bob);
  auto series = sync::track(alice, bob, opts);
  if (!a.truth.empty()) report::label_blocks(series, report::segments_from_json(report::read_json_file(a.truth)));
  {
    auto out = open_out(series_path);
    report::write_series_csv(out, series);
  }
  report::write_json_file(segments_path, report::to_json(sync::summarize_segments(series)));
  std::cout << series.successes() << " of " << series.blocks.size() << " blocks estimated\n";
  return kOk;
}

struct DriftArgs {
  std::string series;
  bool weighted = false;
  bool ta_given = false;
};

int cmd_drift(Run& run, const Common& c, const DriftArgs& a) {
  run.manifest().parameters = Json{{"weighted", a.weighted}};
  const auto drift_path = run.output("drift.json");
  const auto stability_path = run.output("stability.json");
  run.write_manifest();

  std::ifstream in(a.series, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + a.series);
  const auto series = report::read_series_csv(in);
  const auto drift = sync::fit_drift(series, a.weighted);
  const double tau0 = a.ta_given ? c.ta_s : ps_to_seconds(static_cast<double>(series.block_ps));
  report::write_json_file(drift_path, report::to_json(drift));
  report::write_json_file(stability_path, report::to_json(sync::stability_report(drift, tau0)));
  std::cout << "d " << drift.d << " +- " << drift.sigma_d << ", a " << drift.a_per_s << " /s\n";
  return kOk;
}

int cmd_attack(Run& run, const Common& c) {
  const auto cfg = effective_config(c);
  const auto opts = track_options(c);
  run.manifest().seed = cfg.seed;
  run.manifest().config_text = config_text(cfg);
  run.manifest().parameters = options_json(opts);
  const auto truth_path = run.output("truth.json");
  const auto series_path = run.output("series.csv");
  const auto report_path = run.output("attack.json");
  run.write_manifest();

  const auto sim = sim::simulate_two_party(cfg);
  report::write_json_file(truth_path, report::to_json(sim.truth));
  auto series = sync::track(sim.alice, sim.bob, opts);
  report::label_blocks(series, sim.truth.segments);
  {
    auto out = open_out(series_path);
    report::write_series_csv(out, series);
  }

  Json doc;
  doc["blocks"] = series.blocks.size();
  doc["estimates"] = series.successes();

  // Measured versus expected midpoint per delay segment.
  Json segs = Json::array();
  for (const auto& s : sync::summarize_segments(series)) {
    Json j = report::to_json(std::vector<sync::SegmentSummary>{s})[0];
    for (const auto& t : sim.truth.segments) {
      if (t.label != s.label) continue;
      j["true_delta_ps"] = t.delta_ps;
      j["delta_ab_ps"] = t.delta_ab_ps;
      j["delta_ba_ps"] = t.delta_ba_ps;
      j["asymmetry_bias_ps"] = sync::asymmetry_bias(t.delta_ab_ps, t.delta_ba_ps);
      break;
    }
    segs.push_back(j);
  }
  doc["segments"] = segs;

  std::vector<sync::DriftFit> drift;
  try {
    drift.push_back(sync::fit_drift(series));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SeriesTooShort && e.code() != ErrorCode::RankDeficient) throw;
    doc["drift_error"] = std::string(to_string(e.code())) + ": " + e.what();
  }
  if (!drift.empty()) {
    doc["drift"] = report::to_json(drift[0]);
    doc["stability"] = report::to_json(sync::stability_report(drift[0], c.ta_s));
  }

  // Offset (or drift residual) against fiber length, where lengths are known.
  std::vector<double> dist, value;
  for (const auto& b : series.blocks) {
    if (!b.ok()) continue;
    const auto& seg = sim::segment_at(sim.truth.channel, static_cast<double>(b.epoch_mid_ps));
    if (seg.length_m < 0.0) continue;
    dist.push_back(seg.length_m);
    double v = b.estimate->delta_ps;
    if (!drift.empty()) v -= drift[0].evaluate_ps(ps_to_seconds(static_cast<double>(b.epoch_mid_ps)));
    value.push_back(v);
  }
  if (std::set<double>(dist.begin(), dist.end()).size() >= 2 && dist.size() >= 3) {
    const auto lf = sync::delay_correlation(dist, value);
    doc["delay_correlation"] = Json{{"slope_ps_per_m", lf.slope},
                                    {"sigma_slope_ps_per_m", lf.sigma_slope},
                                    {"intercept_ps", lf.intercept},
                                    {"n", lf.n},
                                    {"against", drift.empty() ? "delta" : "drift_residual"}};
  }
  report::write_json_file(report_path, doc);
  std::cout << series.successes() << " of " << series.blocks.size() << " blocks estimated\n";
  return kOk;
}

struct SessionArgs {
  std::string tags;
  std::string role = "alice";
  std::string endpoint;
  std::string key_hex;
};

int cmd_session(Run& run, const Common& c, const SessionArgs& a, bool listen) {
  wire::SessionConfig cfg;
  if (a.role == "alice") {
    cfg.role = Party::Alice;
  } else if (a.role == "bob") {
    cfg.role = Party::Bob;
  } else {
    throw Error(ErrorCode::InvalidArgument, "--role must be alice or bob");
  }
  cfg.track = track_options(c);
  std::string key_hex = a.key_hex;
  if (key_hex.empty()) {
    if (const char* env = std::getenv("PAIRSYNC_KEY_HEX")) key_hex = env;
  }
  if (!key_hex.empty()) cfg.key = wire::parse_key_hex(key_hex);
  const auto [host, port] = parse_endpoint(a.endpoint);

  run.manifest().parameters = options_json(cfg.track);
  run.manifest().parameters["role"] = a.role;
  run.manifest().parameters["keyed"] = cfg.key.has_value();
  const auto series_path = run.output("series.csv");
  const auto peer_path = run.output("peer_estimates.csv");
  run.write_manifest();

  const TagStream local = read_ptag_file(a.tags);
  cfg.on_estimate = [](const sync::BlockResult& b) {
    if (b.estimate) {
      std::cout << "block " << b.block_index << " delta_ps " << b.estimate->delta_ps << " sigma_ps "
                << b.estimate->sigma_delta_ps << std::endl;
    } else {
      std::cout << "block " << b.block_index << " gap " << to_string(*b.failure) << std::endl;
    }
  };

  wire::Socket sock;
  if (listen) {
    wire::Listener listener(host, port);
    std::cerr << "listening on " << host << ':' << listener.port() << std::endl;
    sock = listener.accept();
  } else {
    sock = wire::connect_tcp(host, port, 10000);
  }
  const auto result = wire::run_session(std::move(sock), cfg, local);
  {
    auto out = open_out(series_path);
    report::write_series_csv(out, result.series);
  }
  {
    auto out = open_out(peer_path);
    out.precision(17);
    out << "block_index,status,delta_ps,sigma_ps,round_trip_ps,block_epoch_s\n";
    for (const auto& e : result.peer_estimates) {
      out << e.block_index << ',' << (e.ok ? "ok" : "gap") << ',';
      if (e.ok) out << e.delta_ps << ',' << e.sigma_delta_ps << ',' << e.round_trip_ps;
      else out << ",,";
      out << ',' << ps_to_seconds(static_cast<double>(e.epoch_mid_ps)) << '\n';
    }
  }
  if (result.late_frames_dropped > 0) {
    std::cerr << "warning: dropped " << result.late_frames_dropped << " late frames" << std::endl;
  }
  if (result.peer_disconnected) std::cerr << "warning: peer disconnected early" << std::endl;
  return kOk;
}

struct PrecisionArgs {
  double f = 0.2;
  double sigma_ps = 290.0;
  std::optional<double> v0_per_ns;
  double rate_hz = 200.0;
  std::vector<double> ta_s{1.0, 5.0, 20.0, 100.0};
};

int cmd_precision(Run& run, const PrecisionArgs& a) {
  const fit::PeakShape shape{a.f, a.sigma_ps};
  shape.validate();
  const double v0 = a.v0_per_ns.value_or(fit::pseudo_voigt_density(0.0, shape) * 1e3);
  run.manifest().parameters = Json{{"v0_per_ns", v0}, {"rate_hz", a.rate_hz}, {"ta_s", a.ta_s}};
  const auto path = run.output("precision.csv");
  run.write_manifest();
  if (!(a.rate_hz > 0.0) || !(v0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "rate and V(0) must be positive");

  auto out = open_out(path);
  out << "ta_s,rate_hz,v0_per_ns,delta_t_ps\n";
  std::cout << "V(0) = " << v0 << " /ns, R = " << a.rate_hz << " /s\n";
  for (double ta : a.ta_s) {
    if (!(ta > 0.0)) throw Error(ErrorCode::InvalidArgument, "--ta values must be positive");
    const double dt = sync::predict_precision({v0, a.rate_hz, ta});
    out << ta << ',' << a.rate_hz << ',' << v0 << ',' << dt << '\n';
    std::cout << "T_a " << ta << " s  dt " << dt << " ps\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clock synchronization from correlated photon-pair time tags"};
  app.require_subcommand(1);
  app.set_version_flag("--version", report::kVersion);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out_dir, "Output directory")->capture_default_str();
  };
  auto add_track = [&](CLI::App* sub) {
    sub->add_option("--ta", common.ta_s, "Acquisition time per block, seconds")->capture_default_str();
    sub->add_option("--bin-ps", common.bin_ps, "Fine histogram bin width, ps")->capture_default_str();
    sub->add_option("--threads", common.threads, "Worker threads (0 = all cores)");
  };
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the config seed");
  };

  auto* simulate = app.add_subcommand("simulate", "Simulate two parties; write PTAG files and ground truth");
  add_config(simulate);
  add_common(simulate);

  CorrelateArgs corr;
  auto* correlate = app.add_subcommand("correlate", "Cross-correlate two PTAG files");
  correlate->add_option("alice", corr.alice, "Alice's PTAG file")->required();
  correlate->add_option("bob", corr.bob, "Bob's PTAG file")->required();
  correlate->add_option("--tau-min-ps", corr.tau_min, "Explicit window start (skips the peak search)");
  correlate->add_option("--tau-max-ps", corr.tau_max, "Explicit window end");
  add_track(correlate);
  add_common(correlate);

  TrackArgs trk;
  auto* track = app.add_subcommand("track", "Per-block offset tracking");
  track->add_option("alice", trk.alice, "Alice's PTAG file")->required();
  track->add_option("bob", trk.bob, "Bob's PTAG file")->required();
  track->add_option("--truth", trk.truth, "Ground-truth JSON used to label blocks");
  add_track(track);
  add_common(track);

  DriftArgs dr;
  auto* drift = app.add_subcommand("drift", "Clock-model fit and stability of a series CSV");
  drift->add_option("series", dr.series, "Series CSV from track")->required();
  drift->add_flag("--weighted", dr.weighted, "Weight blocks by 1/sigma^2");
  auto* drift_ta = drift->add_option("--ta", common.ta_s, "Sampling interval override, seconds");
  add_common(drift);

  auto* attack = app.add_subcommand("attack", "Simulate a delay schedule and report its effect");
  add_config(attack);
  add_track(attack);
  add_common(attack);

  SessionArgs srv, cli;
  auto* serve = app.add_subcommand("serve", "Run a live session, waiting for the peer");
  serve->add_option("tags", srv.tags, "Local PTAG file")->required();
  serve->add_option("--listen", srv.endpoint, "host:port to listen on")->required();
  serve->add_option("--role", srv.role, "alice or bob")->capture_default_str();
  serve->add_option("--key-hex", srv.key_hex, "Shared key, 64 hex digits (or PAIRSYNC_KEY_HEX)");
  add_track(serve);
  add_common(serve);

  auto* connect = app.add_subcommand("connect", "Run a live session against a listening peer");
  connect->add_option("tags", cli.tags, "Local PTAG file")->required();
  connect->add_option("--peer", cli.endpoint, "host:port of the peer")->required();
  connect->add_option("--role", cli.role, "alice or bob")->capture_default_str();
  connect->add_option("--key-hex", cli.key_hex, "Shared key, 64 hex digits (or PAIRSYNC_KEY_HEX)");
  add_track(connect);
  add_common(connect);

  PrecisionArgs pa;
  auto* precision = app.add_subcommand("precision", "Poisson-limited precision table");
  precision->add_option("--f", pa.f, "Lorentzian fraction")->capture_default_str();
  precision->add_option("--sigma-ps", pa.sigma_ps, "Shape half width, ps")->capture_default_str();
  precision->add_option("--v0", pa.v0_per_ns, "Peak density V(0) in 1/ns (overrides the shape)");
  precision->add_option("--rate", pa.rate_hz, "Detected pair rate, 1/s")->capture_default_str();
  precision->add_option("--ta", pa.ta_s, "Acquisition times, seconds")->capture_default_str();
  add_common(precision);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  CLI::App* sub = app.get_subcommands().front();
  Run run(sub->get_name(), args, common);
  try {
    if (sub == simulate) return cmd_simulate(run, common);
    if (sub == correlate) return cmd_correlate(run, common, corr);
    if (sub == track) return cmd_track(run, common, trk);
    if (sub == drift) {
      dr.ta_given = drift_ta->count() > 0;
      return cmd_drift(run, common, dr);
    }
    if (sub == attack) return cmd_attack(run, common);
    if (sub == serve) return cmd_session(run, common, srv, true);
    if (sub == connect) return cmd_session(run, common, cli, false);
    if (sub == precision) return cmd_precision(run, pa);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error[Internal]: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
