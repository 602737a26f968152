#include "pairsync/peakfit.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "pairsync/error.hpp"

namespace pairsync::fit {

double DoublePeakModel::value(const Params& p, double tau_ps) const {
  return p[kA0] + bin_width_ps * (p[kA1] * pseudo_voigt_density(tau_ps - p[kTauAB], shape) +
                                   p[kA2] * pseudo_voigt_density(tau_ps - p[kTauBA], shape));
}

Params DoublePeakModel::gradient(const Params& p, double tau_ps) const {
  Params g;
  g[kA0] = 1.0;
  g[kA1] = bin_width_ps * pseudo_voigt_density(tau_ps - p[kTauAB], shape);
  g[kA2] = bin_width_ps * pseudo_voigt_density(tau_ps - p[kTauBA], shape);
  g[kTauAB] = -bin_width_ps * p[kA1] * pseudo_voigt_derivative(tau_ps - p[kTauAB], shape);
  g[kTauBA] = -bin_width_ps * p[kA2] * pseudo_voigt_derivative(tau_ps - p[kTauBA], shape);
  return g;
}

Params DoublePeakFit::params() const {
  Params p;
  p << a0, a1, a2, tau_ab_ps, tau_ba_ps;
  return p;
}

namespace {

struct Bins {
  std::vector<double> tau;
  std::vector<double> counts;
  std::vector<double> weight;
};

double chi2_of(const DoublePeakModel& model, const Params& p, const Bins& bins) {
  double chi2 = 0.0;
  for (std::size_t k = 0; k < bins.tau.size(); ++k) {
    const double r = bins.counts[k] - model.value(p, bins.tau[k]);
    chi2 += bins.weight[k] * r * r;
  }
  return chi2;
}

void normal_equations(const DoublePeakModel& model, const Params& p, const Bins& bins,
                      Covariance& jtwj, Params& jtwr) {
  jtwj.setZero();
  jtwr.setZero();
  for (std::size_t k = 0; k < bins.tau.size(); ++k) {
    const Params g = model.gradient(p, bins.tau[k]);
    const double r = bins.counts[k] - model.value(p, bins.tau[k]);
    jtwj.selfadjointView<Eigen::Lower>().rankUpdate(g, bins.weight[k]);
    jtwr += bins.weight[k] * r * g;
  }
  jtwj = jtwj.selfadjointView<Eigen::Lower>();
}

void clamp_amplitudes(Params& p) {
  for (int i : {kA0, kA1, kA2}) p[i] = std::max(p[i], 0.0);
}

}  // namespace

DoublePeakFit fit_double_peak(const xcorr::CorrelationHistogram& h, const PeakShape& shape,
                              const xcorr::PeakCandidates& init, const FitOptions& options) {
  std::vector<double> tau(h.size()), counts(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    tau[k] = h.bin_center_ps(k);
    counts[k] = static_cast<double>(h.counts[k]);
  }
  return fit_double_peak(tau, counts, static_cast<double>(h.bin_width_ps), shape, init, options);
}

DoublePeakFit fit_double_peak(std::span<const double> tau_ps, std::span<const double> counts,
                              double bin_width_ps, const PeakShape& shape,
                              const xcorr::PeakCandidates& init, const FitOptions& options) {
  shape.validate();
  if (tau_ps.size() != counts.size() || tau_ps.empty() || !(bin_width_ps > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "fit needs matching, non-empty bin centers and counts");
  }
  const double fwhm = shape.fwhm_ps();
  const double hi_init = std::max(init.tau_right_ps, init.tau_left_ps);
  const double lo_init = std::min(init.tau_right_ps, init.tau_left_ps);
  if (hi_init - lo_init < 0.5 * fwhm) {
    throw Error(ErrorCode::DegenerateOverlap,
                "peak candidates " + std::to_string(hi_init - lo_init) +
                    " ps apart cannot be resolved (FWHM " + std::to_string(fwhm) + " ps)");
  }
  const double support_lo = tau_ps.front() - 0.5 * bin_width_ps;
  const double support_hi = tau_ps.back() + 0.5 * bin_width_ps;
  if (support_lo > lo_init - 3.0 * fwhm || support_hi < hi_init + 3.0 * fwhm) {
    throw Error(ErrorCode::InvalidArgument,
                "histogram must extend 3 FWHM beyond both peak candidates");
  }

  Bins bins;
  const double lo = lo_init - options.margin_ps;
  const double hi = hi_init + options.margin_ps;
  for (std::size_t k = 0; k < tau_ps.size(); ++k) {
    const double tau = tau_ps[k];
    if (tau < lo || tau > hi) continue;
    const double c = counts[k];
    bins.tau.push_back(tau);
    bins.counts.push_back(c);
    bins.weight.push_back(1.0 / std::max(c, 1.0));
  }
  if (bins.tau.size() <= kNumParams) {
    throw Error(ErrorCode::InvalidArgument, "too few bins to fit the double-peak model");
  }

  const DoublePeakModel model{shape, bin_width_ps};
  auto height_at = [&](double tau) {
    const auto it = std::lower_bound(bins.tau.begin(), bins.tau.end(), tau - 0.5 * bin_width_ps);
    return it == bins.tau.end() ? 0.0 : bins.counts[static_cast<std::size_t>(it - bins.tau.begin())];
  };
  std::vector<double> sorted = bins.counts;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2),
                   sorted.end());
  const double a0_init = sorted[sorted.size() / 2];
  const double peak_scale = model.bin_width_ps * pseudo_voigt_density(0.0, shape);

  Params p;
  p << a0_init, std::max(1.0, (height_at(hi_init) - a0_init) / peak_scale),
      std::max(1.0, (height_at(lo_init) - a0_init) / peak_scale), hi_init, lo_init;

  Params scale;
  scale << 1.0, 1.0, 1.0, 1.0, 1.0;

  Covariance jtwj;
  Params jtwr;
  double chi2 = chi2_of(model, p, bins);
  double lambda = 1e-3;
  bool converged = false;
  int iter = 0;
  for (; iter < options.max_iterations && !converged; ++iter) {
    normal_equations(model, p, bins, jtwj, jtwr);
    bool accepted = false;
    while (!accepted) {
      Covariance damped = jtwj;
      for (int i = 0; i < kNumParams; ++i) {
        damped(i, i) += lambda * std::max(jtwj(i, i), 1e-12);
      }
      Params trial = p + damped.ldlt().solve(jtwr);
      clamp_amplitudes(trial);
      // Measured after clamping, so an amplitude held at zero counts as settled.
      const Params step = trial - p;
      const bool small =
          ((step.array().abs()) <= options.step_tolerance * (p.array().abs() + scale.array())).all();
      const double chi2_trial = chi2_of(model, trial, bins);
      if (std::isfinite(chi2_trial) && chi2_trial < chi2) {
        p = trial;
        chi2 = chi2_trial;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        converged = small;
      } else {
        lambda *= 10.0;
        if (small || lambda > 1e16) {
          converged = small;
          break;
        }
      }
    }
    if (!accepted && !converged) break;
  }
  if (!converged) {
    throw Error(ErrorCode::NotConverged,
                "double-peak fit did not converge after " + std::to_string(iter) + " iterations");
  }

  normal_equations(model, p, bins, jtwj, jtwr);
  Covariance cov = jtwj.inverse();
  if (!cov.allFinite()) {
    throw Error(ErrorCode::NotConverged, "singular normal matrix at the fitted parameters");
  }

  if (p[kTauAB] < p[kTauBA]) {
    std::swap(p[kA1], p[kA2]);
    std::swap(p[kTauAB], p[kTauBA]);
    Eigen::PermutationMatrix<kNumParams> perm;
    perm.indices() << kA0, kA2, kA1, kTauBA, kTauAB;
    cov = perm * cov * perm.transpose();
  }

  DoublePeakFit fit;
  fit.a0 = p[kA0];
  fit.a1 = p[kA1];
  fit.a2 = p[kA2];
  fit.tau_ab_ps = p[kTauAB];
  fit.tau_ba_ps = p[kTauBA];
  fit.covariance = cov;
  fit.chi2_red = chi2 / static_cast<double>(bins.tau.size() - kNumParams);
  fit.converged = true;
  fit.iterations = iter;
  fit.n_bins = bins.tau.size();

  if (fit.tau_ab_ps - fit.tau_ba_ps < 0.5 * fwhm) {
    throw Error(ErrorCode::DegenerateOverlap,
                "fitted peaks " + std::to_string(fit.tau_ab_ps - fit.tau_ba_ps) +
                    " ps apart cannot be resolved");
  }
  return fit;
}

SyncEstimate estimate_sync(const DoublePeakFit& fit) {
  if (!fit.converged) throw Error(ErrorCode::NotConverged, "fit did not converge");
  const auto& c = fit.covariance;
  SyncEstimate est;
  est.delta_ps = 0.5 * (fit.tau_ab_ps + fit.tau_ba_ps);
  est.round_trip_ps = fit.tau_ab_ps - fit.tau_ba_ps;
  est.sigma_delta_ps =
      0.5 * std::sqrt(std::max(0.0, c(kTauAB, kTauAB) + c(kTauBA, kTauBA) + 2.0 * c(kTauAB, kTauBA)));
  est.sigma_round_trip_ps =
      std::sqrt(std::max(0.0, c(kTauAB, kTauAB) + c(kTauBA, kTauBA) - 2.0 * c(kTauAB, kTauBA)));
  return est;
}

}  // namespace pairsync::fit
