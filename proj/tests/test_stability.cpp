#include <doctest.h>

#include <random>

#include "pairsync/syncpipe.hpp"

using namespace pairsync;
using namespace pairsync::sync;

namespace {

/// TDEV from its definition, summing the phase averages term by term.
double tdev_reference(const std::vector<double>& x, double tau0, std::size_t m) {
  const std::size_t n = x.size();
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t j = 0; j + 3 * m <= n; ++j) {
    double inner = 0.0;
    for (std::size_t i = j; i < j + m; ++i) inner += x[i + 2 * m] - 2.0 * x[i + m] + x[i];
    sum += inner * inner;
    ++terms;
  }
  const double tau = static_cast<double>(m) * tau0;
  const double mvar = sum / (2.0 * static_cast<double>(m * m) * static_cast<double>(terms)) / (tau * tau);
  return tau / std::sqrt(3.0) * std::sqrt(mvar);
}

double adev_reference(const std::vector<double>& x, double tau0, std::size_t m) {
  double sum = 0.0;
  const std::size_t terms = x.size() - 2 * m;
  for (std::size_t i = 0; i < terms; ++i) {
    const double d = (x[i + 2 * m] - 2.0 * x[i + m] + x[i]) * 1e-12;
    sum += d * d;
  }
  const double tau = static_cast<double>(m) * tau0;
  return std::sqrt(sum / (2.0 * static_cast<double>(terms) * tau * tau));
}

std::vector<double> white(std::size_t n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

}  // namespace

TEST_CASE("constant and linear phase have zero deviation") {
  const std::vector<double> flat(101, 42.0);
  std::vector<double> ramp(101);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = 3.5 * static_cast<double>(i) * 20.0;
  for (std::size_t m : {1u, 2u, 5u, 33u}) {
    CHECK(allan_deviation(flat, 20.0, m) == 0.0);
    CHECK(time_deviation(flat, 20.0, m) == 0.0);
    CHECK(allan_deviation(ramp, 20.0, m) < 1e-25);
    CHECK(time_deviation(ramp, 20.0, m) < 1e-9);
  }
}

TEST_CASE("white phase noise levels") {
  const double sigma = 51.0, tau0 = 20.0;
  const auto x = white(10000, sigma, 1);
  const double adev = allan_deviation(x, tau0, 1);
  CHECK(adev == doctest::Approx(std::sqrt(3.0) * sigma * 1e-12 / tau0).epsilon(0.10));
  CHECK(time_deviation(x, tau0, 1) == doctest::Approx(sigma).epsilon(0.10));
  // TDEV of white phase falls as 1/√m.
  CHECK(time_deviation(x, tau0, 16) == doctest::Approx(sigma / 4.0).epsilon(0.15));
}

TEST_CASE("estimators agree with direct evaluation") {
  const auto x = white(997, 10.0, 2);
  for (std::size_t m : {1u, 2u, 3u, 7u, 64u, 332u}) {
    CHECK(time_deviation(x, 1.5, m) == doctest::Approx(tdev_reference(x, 1.5, m)).epsilon(1e-9));
    CHECK(allan_deviation(x, 1.5, m) == doctest::Approx(adev_reference(x, 1.5, m)).epsilon(1e-9));
  }
}

TEST_CASE("length guards") {
  const std::vector<double> x(12, 0.0);
  CHECK_NOTHROW(time_deviation(std::span<const double>(x).first(10), 1.0, 3));
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of([&] { time_deviation(std::span<const double>(x).first(9), 1.0, 3); }) ==
        ErrorCode::SeriesTooShort);
  CHECK(code_of([&] { allan_deviation(std::span<const double>(x).first(6), 1.0, 3); }) ==
        ErrorCode::SeriesTooShort);
  CHECK_NOTHROW(allan_deviation(std::span<const double>(x).first(7), 1.0, 3));
  CHECK_THROWS_AS(allan_deviation(x, 1.0, 0), Error);
  CHECK_THROWS_AS(time_deviation(x, 0.0, 1), Error);
}

TEST_CASE("gaps drop only the terms they touch") {
  auto x = white(200, 5.0, 3);
  const double nan = std::nan("");
  auto with_gap = x;
  with_gap[100] = nan;
  // Remove the affected terms by hand: equal to the estimator over the two halves pooled.
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i + 2 < x.size(); ++i) {
    if (i == 100 || i + 1 == 100 || i + 2 == 100) continue;
    const double d = (x[i + 2] - 2 * x[i + 1] + x[i]) * 1e-12;
    sum += d * d;
    ++terms;
  }
  CHECK(allan_deviation(with_gap, 2.0, 1) == doctest::Approx(std::sqrt(sum / (2.0 * terms * 4.0))));
  CHECK(std::isfinite(time_deviation(with_gap, 2.0, 4)));

  std::vector<double> all_gap(20, nan);
  CHECK_THROWS_AS(allan_deviation(all_gap, 1.0, 1), Error);
}

TEST_CASE("stability report lays residuals on the block grid") {
  DriftFit d;
  for (std::uint64_t k = 0; k < 64; ++k) {
    if (k == 10 || k == 11) continue;
    d.block_indices.push_back(k);
    d.residuals_ps.push_back(k % 2 ? 5.0 : -5.0);
  }
  const auto rep = stability_report(d, 20.0);
  CHECK(rep.tau0_s == 20.0);
  REQUIRE_FALSE(rep.adev.empty());
  REQUIRE_FALSE(rep.tdev.empty());
  CHECK(rep.adev.front().first == 20.0);
  for (std::size_t i = 1; i < rep.adev.size(); ++i) CHECK(rep.adev[i].first > rep.adev[i - 1].first);
  for (std::size_t i = 1; i < rep.tdev.size(); ++i) CHECK(rep.tdev[i].first > rep.tdev[i - 1].first);
  // Alternating ±5 ps: second differences are ±20 ps at m = 1.
  CHECK(rep.adev.front().second == doctest::Approx(20e-12 / std::sqrt(2.0) / 20.0));
  // Gap at blocks 10 and 11 shifts the later samples if indices were ignored; an even
  // m then sees a constant series.
  CHECK(rep.adev[1].second == 0.0);
  CHECK(rep.residual_std_ps == doctest::Approx(5.0).epsilon(0.02));

  CHECK(stability_report(DriftFit{}, 20.0).adev.empty());
}
