#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairsync/clocksim.hpp"
#include "pairsync/peakfit.hpp"
#include "pairsync/syncpipe.hpp"

namespace pairsync::report {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";

Json to_json(const fit::DoublePeakFit& fit);
Json to_json(const fit::SyncEstimate& est);
Json to_json(const sync::DriftFit& drift);
Json to_json(const sync::StabilityReport& report);
Json to_json(const sim::GroundTruth& truth);
Json to_json(const std::vector<sync::SegmentSummary>& segments);

/// Truth segments read back from a ground-truth document.
std::vector<sim::TruthSegment> segments_from_json(const Json& truth);

/// Copies truth labels onto blocks by their mid-epoch.
void label_blocks(sync::SyncSeries& series, const std::vector<sim::TruthSegment>& segments);

/// Columns: block_epoch_s, delta_ps, sigma_ps, round_trip_ps, segment_label,
/// block_index, status. Gaps keep their row with empty numeric fields.
void write_series_csv(std::ostream& out, const sync::SyncSeries& series);
sync::SyncSeries read_series_csv(std::istream& in);

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  /// Effective configuration, so a run is reproducible without the file.
  std::string config_text;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  Json parameters = Json::object();
};

Json to_json(const RunManifest& m);

void write_json_file(const std::string& path, const Json& doc);
Json read_json_file(const std::string& path);

}  // namespace pairsync::report
