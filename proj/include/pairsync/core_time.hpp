#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace pairsync {

/// Picoseconds since the session epoch.
using Picoseconds = std::int64_t;

inline constexpr Picoseconds kPsPerNs = 1000;
inline constexpr Picoseconds kPsPerUs = 1000 * kPsPerNs;
inline constexpr Picoseconds kPsPerMs = 1000 * kPsPerUs;
inline constexpr Picoseconds kPsPerSecond = 1000 * kPsPerMs;

inline constexpr double seconds_to_ps(double s) { return s * 1e12; }
inline constexpr double ps_to_seconds(double ps) { return ps * 1e-12; }

enum class Party : std::uint8_t { Alice = 0, Bob = 1 };

const char* to_string(Party p) noexcept;
Party other(Party p) noexcept;

inline constexpr std::uint16_t kMaxChannel = 16;
inline constexpr std::uint16_t kLocalDetector = 0;

struct TimeTag {
  Picoseconds time_ps = 0;
  std::uint16_t channel = kLocalDetector;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

/// Detection events of one party, ordered by time (ties allowed).
struct TagStream {
  Party party = Party::Alice;
  std::vector<TimeTag> tags;
  /// Free-form session metadata; not carried by the PTAG format.
  std::string epoch_info;

  bool empty() const noexcept { return tags.empty(); }
  std::size_t size() const noexcept { return tags.size(); }

  friend bool operator==(const TagStream&, const TagStream&) = default;
};

/// Throws NonMonotonic / BadRecord if the stream violates its invariants.
void validate(const TagStream& stream);

/// Half-open slice [t_start_ps, t_end_ps) of a stream. `tags` views the
/// parent stream and must not outlive it.
struct Block {
  std::uint64_t index = 0;
  Picoseconds t_start_ps = 0;
  Picoseconds t_end_ps = 0;
  bool partial = false;
  std::span<const TimeTag> tags;

  Picoseconds mid_ps() const noexcept { return t_start_ps + (t_end_ps - t_start_ps) / 2; }
};

/// Segments a stream into consecutive blocks of length `block_ps`, block k
/// covering [k·T, (k+1)·T). Blocks run from 0 up to the block holding the
/// last tag; intermediate empty blocks are kept so indices stay contiguous.
/// If `end_ps` is given the last block is flagged partial when it ends
/// after `end_ps`; otherwise it is flagged partial when it ends after the
/// last tag's time + 1.
std::vector<Block> split_blocks(const TagStream& stream, Picoseconds block_ps);
std::vector<Block> split_blocks(const TagStream& stream, Picoseconds block_ps,
                                Picoseconds end_ps);

/// Tags with time in [lo, hi) as a view into `tags` (which must be sorted).
std::span<const TimeTag> time_range(std::span<const TimeTag> tags, Picoseconds lo,
                                    Picoseconds hi);

// ---- PTAG v1 ------------------------------------------------------------

inline constexpr std::size_t kPtagHeaderBytes = 24;
inline constexpr std::size_t kPtagRecordBytes = 16;
inline constexpr std::uint16_t kPtagVersion = 1;

/// Writes the stream in PTAG v1 format. Returns the number of bytes written.
std::uint64_t encode_stream(const TagStream& stream, std::ostream& sink);
std::vector<std::uint8_t> encode_stream(const TagStream& stream);

TagStream decode_stream(std::istream& source);
TagStream decode_stream(std::span<const std::uint8_t> bytes);

void write_ptag_file(const TagStream& stream, const std::string& path);
TagStream read_ptag_file(const std::string& path);

}  // namespace pairsync
