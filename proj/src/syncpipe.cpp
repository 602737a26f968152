#include "pairsync/syncpipe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace pairsync::sync {

std::size_t SyncSeries::successes() const {
  return static_cast<std::size_t>(
      std::count_if(blocks.begin(), blocks.end(), [](const BlockResult& b) { return b.ok(); }));
}

std::vector<fit::SyncEstimate> SyncSeries::estimates() const {
  std::vector<fit::SyncEstimate> out;
  for (const auto& b : blocks) {
    if (b.ok()) out.push_back(*b.estimate);
  }
  return out;
}

std::pair<Picoseconds, Picoseconds> bob_window_for(const Block& alice_block,
                                                   const TrackOptions& options) {
  const Picoseconds range = options.locate.coarse_range_ps;
  return {alice_block.t_start_ps - range, alice_block.t_end_ps + range};
}

fit::SyncEstimate estimate_block(const Block& alice_block, std::span<const TimeTag> bob_tags,
                                 const TrackOptions& options) {
  xcorr::LocateOptions locate = options.locate;
  locate.shape = options.shape;
  const auto [lo, hi] = bob_window_for(alice_block, options);
  const auto bob = time_range(bob_tags, lo, hi);
  const auto search =
      xcorr::locate_peaks(alice_block.tags, bob, locate, alice_block.t_end_ps - alice_block.t_start_ps);
  const auto fitted = fit::fit_double_peak(search.fine, options.shape, search.candidates, options.fit);
  fit::SyncEstimate est = fit::estimate_sync(fitted);
  est.block_index = alice_block.index;
  est.epoch_mid_ps = alice_block.mid_ps();
  return est;
}

SyncSeries track(const TagStream& alice, const TagStream& bob, const TrackOptions& options) {
  if (options.block_ps <= 0) throw Error(ErrorCode::InvalidArgument, "block length must be positive");
  options.shape.validate();
  validate(alice);
  validate(bob);
  if (alice.empty() || bob.empty()) {
    throw Error(ErrorCode::TrackingFailed, "cannot track with an empty tag stream");
  }
  const Picoseconds range = options.locate.coarse_range_ps;
  if (bob.tags.front().time_ps >= alice.tags.back().time_ps + range ||
      bob.tags.back().time_ps < alice.tags.front().time_ps - range) {
    throw Error(ErrorCode::TrackingFailed, "tag streams do not overlap in time");
  }

  const auto blocks = split_blocks(alice, options.block_ps);
  SyncSeries series;
  series.block_ps = options.block_ps;
  series.blocks.resize(blocks.size());

  auto work = [&](std::size_t k) {
    const Block& blk = blocks[k];
    BlockResult& res = series.blocks[k];
    res.block_index = blk.index;
    res.epoch_mid_ps = blk.mid_ps();
    res.partial = blk.partial;
    try {
      res.estimate = estimate_block(blk, bob.tags, options);
    } catch (const Error& e) {
      res.failure = e.code();
      res.failure_message = e.what();
    }
  };

  unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(std::max<std::size_t>(blocks.size(), 1)));
  if (threads == 1) {
    for (std::size_t k = 0; k < blocks.size(); ++k) work(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < blocks.size(); k = next++) work(k);
      });
    }
    for (auto& th : pool) th.join();
  }

  if (series.successes() == 0) {
    std::string why = "no block produced an offset estimate";
    for (const auto& b : series.blocks) {
      if (b.failure) {
        why += " (block " + std::to_string(b.block_index) + ": " + std::string(to_string(*b.failure)) +
               ": " + b.failure_message + ")";
        break;
      }
    }
    throw Error(ErrorCode::TrackingFailed, why);
  }
  return series;
}

// ---- drift --------------------------------------------------------------

double DriftFit::evaluate_ps(double t_s) const {
  return a_per_s * 1e12 * t_s * t_s + d * 1e12 * t_s + b_ps;
}

DriftFit fit_drift(std::span<const double> epochs_s, std::span<const double> delta_ps,
                   std::span<const double> sigma_ps) {
  const std::size_t n = epochs_s.size();
  if (delta_ps.size() != n || (!sigma_ps.empty() && sigma_ps.size() != n)) {
    throw Error(ErrorCode::InvalidArgument, "drift fit inputs differ in length");
  }
  if (n < 3) throw Error(ErrorCode::SeriesTooShort, "drift fit needs at least 3 estimates");

  // Columns are scaled by the epoch span so the normal problem stays well
  // conditioned; coefficients are unscaled afterwards.
  double span = 0.0;
  for (double t : epochs_s) span = std::max(span, std::abs(t));
  if (span == 0.0) span = 1.0;

  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double u = epochs_s[i] / span;
    const auto r = static_cast<Eigen::Index>(i);
    if (!sigma_ps.empty()) {
      if (!(sigma_ps[i] > 0.0)) throw Error(ErrorCode::InvalidArgument, "weights need positive sigma");
      w[r] = 1.0 / sigma_ps[i];
    }
    x(r, 0) = w[r];
    x(r, 1) = w[r] * u;
    x(r, 2) = w[r] * u * u;
    y[r] = w[r] * delta_ps[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-12);
  if (qr.rank() < 3) {
    throw Error(ErrorCode::RankDeficient, "drift fit needs at least 3 distinct epochs");
  }
  const Eigen::Vector3d coef = qr.solve(y);
  const Eigen::VectorXd fitted = x * coef;

  DriftFit out;
  out.b_ps = coef[0];
  out.d = coef[1] / span * 1e-12;
  out.a_per_s = coef[2] / (span * span) * 1e-12;
  out.epochs_s.assign(epochs_s.begin(), epochs_s.end());
  out.residuals_ps.resize(n);
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.residuals_ps[i] = delta_ps[i] - out.evaluate_ps(epochs_s[i]);
    const auto r = static_cast<Eigen::Index>(i);
    rss += (y[r] - fitted[r]) * (y[r] - fitted[r]);
  }
  const Eigen::Matrix3d xtx_inv = (x.transpose() * x).inverse();
  // Unweighted: scale by the residual variance. Weighted: sigmas are absolute.
  const double s2 = sigma_ps.empty()
                        ? (n > 3 ? rss / static_cast<double>(n - 3) : std::nan(""))
                        : 1.0;
  out.sigma_b_ps = std::sqrt(s2 * xtx_inv(0, 0));
  out.sigma_d = std::sqrt(s2 * xtx_inv(1, 1)) / span * 1e-12;
  out.sigma_a_per_s = std::sqrt(s2 * xtx_inv(2, 2)) / (span * span) * 1e-12;
  return out;
}

DriftFit fit_drift(const SyncSeries& series, bool weighted) {
  std::vector<double> t, delta, sigma;
  std::vector<std::uint64_t> index;
  for (const auto& b : series.blocks) {
    if (!b.ok()) continue;
    t.push_back(ps_to_seconds(static_cast<double>(b.epoch_mid_ps)));
    delta.push_back(b.estimate->delta_ps);
    sigma.push_back(b.estimate->sigma_delta_ps);
    index.push_back(b.block_index);
  }
  DriftFit out = fit_drift(t, delta, weighted ? std::span<const double>(sigma) : std::span<const double>{});
  out.block_indices = std::move(index);
  return out;
}

// ---- stability ----------------------------------------------------------

namespace {

/// Second differences x[i+2m] − 2x[i+m] + x[i] in seconds; NaN marks gaps.
std::vector<double> second_differences(std::span<const double> x_ps, std::size_t m) {
  std::vector<double> d;
  if (x_ps.size() < 2 * m + 1) return d;
  d.resize(x_ps.size() - 2 * m);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = (x_ps[i + 2 * m] - 2.0 * x_ps[i + m] + x_ps[i]) * 1e-12;
  }
  return d;
}

}  // namespace

double allan_deviation(std::span<const double> x_ps, double tau0_s, std::size_t m) {
  if (m == 0 || !(tau0_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "need m >= 1 and tau0 > 0");
  if (x_ps.size() < 2 * m + 1) {
    throw Error(ErrorCode::SeriesTooShort, "ADEV needs at least 2m+1 phase samples");
  }
  const auto d = second_differences(x_ps, m);
  double sum = 0.0;
  std::size_t terms = 0;
  for (double v : d) {
    if (std::isnan(v)) continue;
    sum += v * v;
    ++terms;
  }
  if (terms == 0) throw Error(ErrorCode::SeriesTooShort, "no gap-free ADEV terms");
  const double tau = static_cast<double>(m) * tau0_s;
  return std::sqrt(sum / (2.0 * static_cast<double>(terms) * tau * tau));
}

double time_deviation(std::span<const double> x_ps, double tau0_s, std::size_t m) {
  if (m == 0 || !(tau0_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "need m >= 1 and tau0 > 0");
  if (x_ps.size() < 3 * m + 1) {
    throw Error(ErrorCode::SeriesTooShort, "TDEV needs at least 3m+1 phase samples");
  }
  const auto d = second_differences(x_ps, m);
  std::vector<double> prefix(d.size() + 1, 0.0);
  std::vector<std::size_t> gaps(d.size() + 1, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const bool gap = std::isnan(d[i]);
    prefix[i + 1] = prefix[i] + (gap ? 0.0 : d[i]);
    gaps[i + 1] = gaps[i] + (gap ? 1 : 0);
  }
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t j = 0; j + m <= d.size(); ++j) {
    if (gaps[j + m] != gaps[j]) continue;
    const double inner = prefix[j + m] - prefix[j];
    sum += inner * inner;
    ++terms;
  }
  if (terms == 0) throw Error(ErrorCode::SeriesTooShort, "no gap-free TDEV terms");
  const double mm = static_cast<double>(m);
  const double tau = mm * tau0_s;
  const double mod_avar = sum / (2.0 * mm * mm * tau * tau * static_cast<double>(terms));
  return tau / std::sqrt(3.0) * std::sqrt(mod_avar) * 1e12;
}

StabilityReport stability_report(const DriftFit& drift, double tau0_s) {
  StabilityReport rep;
  rep.tau0_s = tau0_s;
  if (drift.residuals_ps.empty()) return rep;

  std::vector<double> grid;
  if (drift.block_indices.size() == drift.residuals_ps.size()) {
    const auto first = drift.block_indices.front();
    grid.assign(drift.block_indices.back() - first + 1, std::nan(""));
    for (std::size_t i = 0; i < drift.residuals_ps.size(); ++i) {
      grid[drift.block_indices[i] - first] = drift.residuals_ps[i];
    }
  } else {
    grid = drift.residuals_ps;
  }

  const double mean = std::accumulate(drift.residuals_ps.begin(), drift.residuals_ps.end(), 0.0) /
                      static_cast<double>(drift.residuals_ps.size());
  double ss = 0.0;
  for (double r : drift.residuals_ps) ss += (r - mean) * (r - mean);
  rep.residual_std_ps =
      drift.residuals_ps.size() > 1 ? std::sqrt(ss / static_cast<double>(drift.residuals_ps.size() - 1)) : 0.0;

  for (std::size_t m = 1; grid.size() >= 2 * m + 1; m *= 2) {
    try {
      rep.adev.emplace_back(static_cast<double>(m) * tau0_s, allan_deviation(grid, tau0_s, m));
    } catch (const Error&) {
    }
    if (grid.size() >= 3 * m + 1) {
      try {
        rep.tdev.emplace_back(static_cast<double>(m) * tau0_s, time_deviation(grid, tau0_s, m));
      } catch (const Error&) {
      }
    }
  }
  return rep;
}

// ---- precision and attacks ---------------------------------------------

double predict_precision(const PrecisionModel& model) {
  if (!(model.v0_per_ns > 0.0) || !(model.rate_hz > 0.0) || !(model.t_a_s > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "precision model parameters must be positive");
  }
  const double v0_per_ps = model.v0_per_ns * 1e-3;
  return (1.0 / std::sqrt(2.0)) * (1.0 / (2.0 * v0_per_ps)) / std::sqrt(model.rate_hz * model.t_a_s);
}

LinearFit delay_correlation(std::span<const double> distance_m, std::span<const double> value_ps) {
  if (distance_m.size() != value_ps.size()) {
    throw Error(ErrorCode::InvalidArgument, "distance and offset series differ in length");
  }
  const std::size_t n = distance_m.size();
  if (n < 3) throw Error(ErrorCode::SeriesTooShort, "slope fit needs at least 3 points");
  const double mx = std::accumulate(distance_m.begin(), distance_m.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(value_ps.begin(), value_ps.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (distance_m[i] - mx) * (distance_m[i] - mx);
    sxy += (distance_m[i] - mx) * (value_ps[i] - my);
  }
  if (sxx <= 1e-18 * std::max(1.0, mx * mx) * static_cast<double>(n)) {
    throw Error(ErrorCode::InvalidArgument, "all distances are equal; slope undefined");
  }
  LinearFit fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = value_ps[i] - fit.intercept - fit.slope * distance_m[i];
    rss += r * r;
  }
  fit.sigma_slope = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  return fit;
}

double asymmetry_bias(double delta_ab_ps, double delta_ba_ps) {
  if (delta_ab_ps < 0.0 || delta_ba_ps < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "propagation delays must be non-negative");
  }
  return -0.5 * (delta_ab_ps - delta_ba_ps);
}

std::vector<SegmentSummary> summarize_segments(const SyncSeries& series) {
  std::vector<SegmentSummary> out;
  std::vector<std::vector<const fit::SyncEstimate*>> members;
  for (std::size_t k = 0; k < series.blocks.size(); ++k) {
    const auto& b = series.blocks[k];
    if (!b.ok()) continue;
    if (out.empty() || out.back().label != b.label) {
      out.push_back({b.label, k, 0, 0.0, 0.0, 0.0});
      members.emplace_back();
    }
    members.back().push_back(&*b.estimate);
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    auto& seg = out[s];
    seg.n = members[s].size();
    double sum = 0.0, rt = 0.0;
    for (const auto* e : members[s]) {
      sum += e->delta_ps;
      rt += e->round_trip_ps;
    }
    seg.mean_delta_ps = sum / static_cast<double>(seg.n);
    seg.mean_round_trip_ps = rt / static_cast<double>(seg.n);
    double ss = 0.0;
    for (const auto* e : members[s]) ss += (e->delta_ps - seg.mean_delta_ps) * (e->delta_ps - seg.mean_delta_ps);
    seg.std_delta_ps = seg.n > 1 ? std::sqrt(ss / static_cast<double>(seg.n - 1)) : 0.0;
  }
  return out;
}

}  // namespace pairsync::sync
