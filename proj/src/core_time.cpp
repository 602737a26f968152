#include "pairsync/core_time.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "pairsync/error.hpp"

namespace pairsync {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'A', 'I', 'R', 'S', 'Y', 'N', 'C'};

template <typename T>
void put_le(std::uint8_t* out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::uint8_t>(u >> (8 * i));
  }
}

template <typename T>
T get_le(const std::uint8_t* in) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(in[i]) << (8 * i);
  }
  return static_cast<T>(u);
}

std::size_t read_some(std::istream& in, std::uint8_t* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount());
}

}  // namespace

const char* to_string(Party p) noexcept { return p == Party::Alice ? "alice" : "bob"; }

Party other(Party p) noexcept { return p == Party::Alice ? Party::Bob : Party::Alice; }

void validate(const TagStream& stream) {
  for (std::size_t i = 0; i < stream.tags.size(); ++i) {
    if (stream.tags[i].channel >= kMaxChannel) {
      throw Error(ErrorCode::BadRecord,
                  "tag " + std::to_string(i) + " has channel " +
                      std::to_string(stream.tags[i].channel) + " >= 16");
    }
    if (i > 0 && stream.tags[i].time_ps < stream.tags[i - 1].time_ps) {
      throw Error(ErrorCode::NonMonotonic,
                  "tag " + std::to_string(i) + " precedes its predecessor");
    }
  }
}

std::span<const TimeTag> time_range(std::span<const TimeTag> tags, Picoseconds lo,
                                    Picoseconds hi) {
  auto by_time = [](const TimeTag& t, Picoseconds v) { return t.time_ps < v; };
  auto first = std::lower_bound(tags.begin(), tags.end(), lo, by_time);
  auto last = std::lower_bound(first, tags.end(), hi, by_time);
  return {first, last};
}

std::vector<Block> split_blocks(const TagStream& stream, Picoseconds block_ps) {
  if (stream.empty()) {
    if (block_ps <= 0) throw Error(ErrorCode::InvalidArgument, "block length must be positive");
    return {};
  }
  return split_blocks(stream, block_ps, stream.tags.back().time_ps + 1);
}

std::vector<Block> split_blocks(const TagStream& stream, Picoseconds block_ps,
                                Picoseconds end_ps) {
  if (block_ps <= 0) throw Error(ErrorCode::InvalidArgument, "block length must be positive");
  if (stream.empty()) return {};
  if (stream.tags.front().time_ps < 0) {
    throw Error(ErrorCode::InvalidArgument, "cannot segment tags before the session epoch");
  }
  const std::span<const TimeTag> all(stream.tags);
  const auto last_index = static_cast<std::uint64_t>(stream.tags.back().time_ps / block_ps);

  std::vector<Block> blocks;
  blocks.reserve(last_index + 1);
  auto rest = all;
  for (std::uint64_t k = 0; k <= last_index; ++k) {
    Block b;
    b.index = k;
    b.t_start_ps = static_cast<Picoseconds>(k) * block_ps;
    b.t_end_ps = b.t_start_ps + block_ps;
    b.tags = time_range(rest, b.t_start_ps, b.t_end_ps);
    rest = rest.subspan(b.tags.size());
    blocks.push_back(b);
  }
  blocks.back().partial = blocks.back().t_end_ps > end_ps;
  return blocks;
}

std::uint64_t encode_stream(const TagStream& stream, std::ostream& sink) {
  validate(stream);

  std::array<std::uint8_t, kPtagHeaderBytes> header{};
  std::memcpy(header.data(), kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(header.data() + 8, kPtagVersion);
  header[10] = static_cast<std::uint8_t>(stream.party);
  header[11] = 0;
  put_le<std::uint64_t>(header.data() + 12, stream.tags.size());
  put_le<std::uint32_t>(header.data() + 20, 0);
  sink.write(reinterpret_cast<const char*>(header.data()), header.size());

  std::array<std::uint8_t, kPtagRecordBytes> rec{};
  for (const auto& tag : stream.tags) {
    put_le<std::int64_t>(rec.data(), tag.time_ps);
    put_le<std::uint16_t>(rec.data() + 8, tag.channel);
    put_le<std::uint16_t>(rec.data() + 10, 0);
    put_le<std::uint32_t>(rec.data() + 12, 0);
    sink.write(reinterpret_cast<const char*>(rec.data()), rec.size());
  }
  if (!sink) throw Error(ErrorCode::IoError, "failed to write tag stream");
  return kPtagHeaderBytes + kPtagRecordBytes * stream.tags.size();
}

std::vector<std::uint8_t> encode_stream(const TagStream& stream) {
  std::ostringstream out(std::ios::binary);
  encode_stream(stream, out);
  const std::string s = std::move(out).str();
  return {s.begin(), s.end()};
}

TagStream decode_stream(std::istream& source) {
  std::array<std::uint8_t, kPtagHeaderBytes> header{};
  const std::size_t got = read_some(source, header.data(), header.size());
  if (got >= kMagic.size() && std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error(ErrorCode::BadMagic, "not a PTAG file");
  }
  if (got < header.size()) {
    throw Error(ErrorCode::TruncatedHeader,
                "PTAG header truncated at " + std::to_string(got) + " bytes");
  }
  const auto version = get_le<std::uint16_t>(header.data() + 8);
  if (version != kPtagVersion) {
    throw Error(ErrorCode::BadVersion, "unsupported PTAG version " + std::to_string(version));
  }
  if (header[10] > 1) {
    throw Error(ErrorCode::BadRecord, "unknown party " + std::to_string(header[10]));
  }
  TagStream stream;
  stream.party = static_cast<Party>(header[10]);
  const auto count = get_le<std::uint64_t>(header.data() + 12);
  stream.tags.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));

  std::array<std::uint8_t, kPtagRecordBytes> rec{};
  for (std::uint64_t i = 0; i < count; ++i) {
    if (read_some(source, rec.data(), rec.size()) != rec.size()) {
      throw Error(ErrorCode::TruncatedRecord, "PTAG record " + std::to_string(i) +
                                                  " of " + std::to_string(count) +
                                                  " is truncated");
    }
    TimeTag tag{get_le<std::int64_t>(rec.data()), get_le<std::uint16_t>(rec.data() + 8)};
    if (tag.channel >= kMaxChannel) {
      throw Error(ErrorCode::BadRecord, "record " + std::to_string(i) + " has channel >= 16");
    }
    if (!stream.tags.empty() && tag.time_ps < stream.tags.back().time_ps) {
      throw Error(ErrorCode::NonMonotonic,
                  "record " + std::to_string(i) + " goes back in time");
    }
    stream.tags.push_back(tag);
  }
  if (source.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::BadRecord, "trailing bytes after the last record");
  }
  return stream;
}

TagStream decode_stream(std::span<const std::uint8_t> bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return decode_stream(in);
}

void write_ptag_file(const TagStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  encode_stream(stream, out);
}

TagStream read_ptag_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return decode_stream(in);
}

}  // namespace pairsync
