#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "pairsync/report.hpp"
#include "test_support.hpp"

using namespace pairsync;
using namespace pairsync::report;

namespace {

sync::SyncSeries sample_series() {
  sync::SyncSeries s;
  s.block_ps = 20 * kPsPerSecond;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1e3);
  for (std::uint64_t k = 0; k < 8; ++k) {
    sync::BlockResult b;
    b.block_index = k;
    b.epoch_mid_ps = static_cast<Picoseconds>(k) * s.block_ps + s.block_ps / 2;
    b.label = k < 4 ? "L=1.7m" : "fiber, \"long\"";
    if (k == 3) {
      b.failure = ErrorCode::DegenerateOverlap;
      b.failure_message = "x";
    } else {
      fit::SyncEstimate e;
      e.delta_ps = n(rng) / 3.0;
      e.sigma_delta_ps = std::abs(n(rng)) / 7.0;
      e.round_trip_ps = 16666.0 + n(rng) / 11.0;
      e.block_index = k;
      e.epoch_mid_ps = b.epoch_mid_ps;
      b.estimate = e;
    }
    s.blocks.push_back(b);
  }
  return s;
}

}  // namespace

TEST_CASE("series CSV layout") {
  std::ostringstream out;
  write_series_csv(out, sample_series());
  std::istringstream lines(out.str());
  std::string header, first, gap;
  std::getline(lines, header);
  CHECK(header == "block_epoch_s,delta_ps,sigma_ps,round_trip_ps,segment_label,block_index,status");
  std::getline(lines, first);
  CHECK(first.rfind("10,", 0) == 0);
  CHECK(first.find(",L=1.7m,0,ok") != std::string::npos);
  for (int i = 0; i < 3; ++i) std::getline(lines, gap);
  CHECK(gap == "70,,,,L=1.7m,3,DegenerateOverlap");
  std::string quoted;
  std::getline(lines, quoted);
  CHECK(quoted.find("\"fiber, \"\"long\"\"\"") != std::string::npos);
}

TEST_CASE("series CSV round trip is exact") {
  const auto s = sample_series();
  std::ostringstream out;
  write_series_csv(out, s);
  std::istringstream in(out.str());
  const auto back = read_series_csv(in);
  CHECK(back.block_ps == s.block_ps);
  REQUIRE(back.blocks.size() == s.blocks.size());
  for (std::size_t k = 0; k < s.blocks.size(); ++k) {
    const auto& a = s.blocks[k];
    const auto& b = back.blocks[k];
    CHECK(b.block_index == a.block_index);
    CHECK(b.epoch_mid_ps == a.epoch_mid_ps);
    CHECK(b.label == a.label);
    REQUIRE(b.ok() == a.ok());
    if (a.ok()) {
      CHECK(b.estimate->delta_ps == a.estimate->delta_ps);
      CHECK(b.estimate->sigma_delta_ps == a.estimate->sigma_delta_ps);
      CHECK(b.estimate->round_trip_ps == a.estimate->round_trip_ps);
    } else {
      CHECK(b.failure == a.failure);
    }
  }
  // Drift fits agree whether computed before or after the file.
  CHECK(sync::fit_drift(back).d == sync::fit_drift(s).d);
}

TEST_CASE("series CSV with only the core columns") {
  std::istringstream in("block_epoch_s,delta_ps,sigma_ps,round_trip_ps,segment_label\n"
                        "1,5,2,100,a\n3,,,,a\n5,7,2,100,b\n");
  const auto s = read_series_csv(in);
  REQUIRE(s.blocks.size() == 3);
  CHECK(s.block_ps == 2 * kPsPerSecond);
  CHECK(s.blocks[1].block_index == 1);
  CHECK_FALSE(s.blocks[1].ok());
  CHECK(s.blocks[2].estimate->delta_ps == 7.0);
}

TEST_CASE("series CSV errors") {
  std::istringstream empty("");
  CHECK_THROWS_AS(read_series_csv(empty), Error);
  std::istringstream no_delta("block_epoch_s,sigma_ps\n1,2\n");
  CHECK_THROWS_AS(read_series_csv(no_delta), Error);
  std::istringstream junk("block_epoch_s,delta_ps,sigma_ps\n1,abc,2\n");
  CHECK_THROWS_AS(read_series_csv(junk), Error);
  std::istringstream short_row("block_epoch_s,delta_ps,sigma_ps\n1,2\n");
  CHECK_THROWS_AS(read_series_csv(short_row), Error);
}

TEST_CASE("JSON documents") {
  fit::DoublePeakFit f;
  f.a0 = 1;
  f.a1 = 2;
  f.a2 = 3;
  f.tau_ab_ps = 50000;
  f.tau_ba_ps = -30000;
  f.covariance(fit::kTauAB, fit::kTauAB) = 4.0;
  const auto j = to_json(f);
  CHECK(j["tau_ab_ps"] == 50000.0);
  CHECK(j["sigma_tau_ab_ps"] == 2.0);
  CHECK(j["covariance"].size() == 5);
  CHECK(j["parameter_order"][3] == "tau_ab_ps");

  std::vector<double> t{10, 30, 50, 70}, y{1, 2, 4, 3};
  auto drift = sync::fit_drift(t, y);
  drift.block_indices = {0, 1, 2, 3};
  const auto dj = to_json(drift);
  CHECK(dj["residuals"].size() == 4);
  CHECK(dj["residuals"][2]["block_index"] == 2);

  sync::StabilityReport rep;
  rep.tau0_s = 20;
  rep.adev = {{20.0, 1e-12}, {40.0, std::nan("")}};
  const auto sj = to_json(rep);
  CHECK(sj["adev"][1]["adev"].is_null());
  CHECK(sj["adev"][0]["tau_s"] == 20.0);

  sim::GroundTruth truth;
  truth.segments = {{0, 10, 5.0, 8333.0, 8333.0, "L=1.7m"}, {10, 20, 6.0, 100.0, 60.0, "attack"}};
  const auto tj = to_json(truth);
  const auto segs = segments_from_json(tj);
  REQUIRE(segs.size() == 2);
  CHECK(segs[1].label == "attack");
  CHECK(segs[1].delta_ab_ps == 100.0);
  CHECK_THROWS_AS(segments_from_json(Json::object()), Error);
}

TEST_CASE("blocks take the label of the segment holding their midpoint") {
  auto s = sample_series();
  for (auto& b : s.blocks) b.label.clear();
  label_blocks(s, {{0, 50 * kPsPerSecond, 0, 0, 0, "first"}, {50 * kPsPerSecond, 200 * kPsPerSecond, 0, 0, 0, "second"}});
  CHECK(s.blocks[1].label == "first");
  CHECK(s.blocks[2].label == "second");  // midpoint 50 s opens the next segment
  CHECK(s.blocks[3].label == "second");
}

TEST_CASE("manifest and file helpers") {
  RunManifest m;
  m.command = "simulate";
  m.argv = {"pairsync", "simulate"};
  m.seed = 7;
  m.outputs = {"alice.ptag"};
  const auto j = to_json(m);
  CHECK(j["tool"] == "pairsync");
  CHECK(j["seed"] == 7);
  CHECK(j.dump().find("time") == std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "pairsync_report_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.json").string();
  write_json_file(path, j);
  CHECK(read_json_file(path) == j);
  CHECK_THROWS_AS(read_json_file((dir / "missing.json").string()), Error);
  std::filesystem::remove_all(dir);
}
