#include <doctest.h>

#include <random>
#include <sstream>

#include "pairsync/core_time.hpp"
#include "pairsync/error.hpp"
#include "test_support.hpp"

using namespace pairsync;
using testsupport::stream_of;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

TagStream random_stream(std::mt19937_64& rng, std::size_t n) {
  TagStream s;
  s.party = rng() % 2 ? Party::Bob : Party::Alice;
  std::uniform_int_distribution<Picoseconds> step(0, 5'000'000);
  std::uniform_int_distribution<int> ch(0, 15);
  Picoseconds t = std::uniform_int_distribution<Picoseconds>(-1'000'000'000, 1'000'000'000)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    t += step(rng);
    s.tags.push_back({t, static_cast<std::uint16_t>(ch(rng))});
  }
  return s;
}

}  // namespace

TEST_CASE("empty stream encodes to the 24-byte header") {
  TagStream s;
  const auto bytes = encode_stream(s);
  REQUIRE(bytes.size() == 24);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "PAIRSYNC");
  CHECK(bytes[8] == 1);
  CHECK(bytes[9] == 0);
  for (std::size_t i = 10; i < 24; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("single zero tag encodes to a zero record") {
  const auto s = stream_of(Party::Alice, {0});
  const auto bytes = encode_stream(s);
  REQUIRE(bytes.size() == 40);
  CHECK(bytes[12] == 1);  // record count
  for (std::size_t i = 24; i < 40; ++i) CHECK(bytes[i] == 0);

  TagStream c;
  c.tags.push_back({0, 3});
  const auto with_channel = encode_stream(c);
  CHECK(with_channel[24 + 8] == 3);
  CHECK(with_channel[24 + 9] == 0);
}

TEST_CASE("little-endian layout of a record") {
  TagStream s;
  s.party = Party::Bob;
  s.tags.push_back({-2, 7});
  const auto b = encode_stream(s);
  CHECK(b[10] == 1);
  for (std::size_t i = 0; i < 8; ++i) CHECK(b[24 + i] == (i == 0 ? 0xFE : 0xFF));
  CHECK(b[32] == 7);
}

TEST_CASE("round trip on random streams") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stream(rng, trial == 0 ? 1000 : rng() % 300);
    std::stringstream io(std::ios::in | std::ios::out | std::ios::binary);
    const auto n = encode_stream(s, io);
    CHECK(n == 24 + 16 * s.size());
    auto decoded = decode_stream(io);
    CHECK(decoded.tags == s.tags);
    CHECK(decoded.party == s.party);
  }
}

TEST_CASE("exhaustive round trip over tiny streams") {
  // All streams of up to 3 tags on a 3-value time grid and 2 channels.
  const Picoseconds times[] = {-1, 0, 5};
  for (int n = 0; n <= 3; ++n) {
    int combos = 1;
    for (int i = 0; i < n; ++i) combos *= 6;
    for (int c = 0; c < combos; ++c) {
      TagStream s;
      int x = c;
      for (int i = 0; i < n; ++i) {
        s.tags.push_back({times[(x % 6) / 2], static_cast<std::uint16_t>(x % 2)});
        x /= 6;
      }
      if (!std::is_sorted(s.tags.begin(), s.tags.end(),
                          [](auto& a, auto& b) { return a.time_ps < b.time_ps; })) {
        CHECK(code_of([&] { encode_stream(s); }) == ErrorCode::NonMonotonic);
        continue;
      }
      const auto bytes = encode_stream(s);
      CHECK(decode_stream(bytes).tags == s.tags);
      CHECK(encode_stream(decode_stream(bytes)) == bytes);
    }
  }
}

TEST_CASE("decode rejects malformed input") {
  const auto good = encode_stream(stream_of(Party::Alice, {1, 2, 3}));

  SUBCASE("truncated mid-record") {
    std::vector<std::uint8_t> b(good.begin(), good.end() - 5);
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::TruncatedRecord);
  }
  SUBCASE("truncated header") {
    std::vector<std::uint8_t> b(good.begin(), good.begin() + 12);
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::TruncatedHeader);
  }
  SUBCASE("bad magic") {
    auto b = good;
    b[0] = 'X';
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::BadMagic);
  }
  SUBCASE("bad version") {
    auto b = good;
    b[8] = 2;
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::BadVersion);
  }
  SUBCASE("decreasing times") {
    auto b = good;
    b[24 + 16] = 9;  // second record now 9 > third record 3
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::NonMonotonic);
  }
  SUBCASE("channel out of range") {
    auto b = good;
    b[24 + 8] = 16;
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::BadRecord);
  }
  SUBCASE("trailing bytes") {
    auto b = good;
    b.push_back(0);
    CHECK(code_of([&] { decode_stream(b); }) == ErrorCode::BadRecord);
  }
}

TEST_CASE("split_blocks counts and boundaries") {
  const Picoseconds T = 20 * kPsPerSecond;

  SUBCASE("tags spanning [0, 60 s) give 3 blocks") {
    const auto s = stream_of(Party::Alice, {0, 5 * kPsPerSecond, 59 * kPsPerSecond});
    const auto blocks = split_blocks(s, T, 60 * kPsPerSecond);
    REQUIRE(blocks.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(blocks[k].t_start_ps == static_cast<Picoseconds>(k) * T);
      CHECK(blocks[k].t_end_ps - blocks[k].t_start_ps == T);
      CHECK_FALSE(blocks[k].partial);
    }
  }
  SUBCASE("tag exactly at T belongs to block 1") {
    const auto s = stream_of(Party::Alice, {1, T});
    const auto blocks = split_blocks(s, T);
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0].tags.size() == 1);
    CHECK(blocks[1].tags.size() == 1);
    CHECK(blocks[1].tags[0].time_ps == T);
  }
  SUBCASE("empty stream") { CHECK(split_blocks(TagStream{}, T).empty()); }
  SUBCASE("trailing partial block is flagged") {
    const auto s = stream_of(Party::Alice, {0, 45 * kPsPerSecond});
    const auto blocks = split_blocks(s, T);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks.back().partial);
    CHECK_FALSE(blocks.front().partial);
  }
  SUBCASE("non-positive block length") {
    CHECK(code_of([] { split_blocks(stream_of(Party::Alice, {1}), 0); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { split_blocks(TagStream{}, -5); }) == ErrorCode::InvalidArgument);
  }
  SUBCASE("intermediate empty blocks are kept") {
    const auto s = stream_of(Party::Alice, {1, 3 * T + 1});
    const auto blocks = split_blocks(s, T);
    REQUIRE(blocks.size() == 4);
    CHECK(blocks[1].tags.empty());
    CHECK(blocks[2].tags.empty());
  }
}

TEST_CASE("concatenated blocks reproduce the stream") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto times = testsupport::random_times(rng, rng() % 500, 0, 10'000'000);
    const auto s = stream_of(Party::Bob, times);
    const Picoseconds T = 1 + static_cast<Picoseconds>(rng() % 2'000'000);
    std::vector<TimeTag> joined;
    for (const auto& b : split_blocks(s, T)) {
      for (const auto& t : b.tags) {
        CHECK(t.time_ps >= b.t_start_ps);
        CHECK(t.time_ps < b.t_end_ps);
        CHECK(static_cast<std::uint64_t>(t.time_ps / T) == b.index);
      }
      joined.insert(joined.end(), b.tags.begin(), b.tags.end());
    }
    CHECK(joined == s.tags);
  }
}

TEST_CASE("time_range is half-open") {
  const auto s = stream_of(Party::Alice, {1, 2, 2, 3, 7});
  CHECK(time_range(s.tags, 2, 3).size() == 2);
  CHECK(time_range(s.tags, 2, 4).size() == 3);
  CHECK(time_range(s.tags, 8, 100).empty());
  CHECK(time_range(s.tags, -10, 1).empty());
}

TEST_CASE("file round trip") {
  const auto path = std::string("test_core_time_roundtrip.ptag");
  const auto s = stream_of(Party::Bob, {-5, 0, 10, 10, 99});
  write_ptag_file(s, path);
  const auto back = read_ptag_file(path);
  CHECK(back.tags == s.tags);
  CHECK(back.party == Party::Bob);
  std::remove(path.c_str());
  CHECK(code_of([] { read_ptag_file("definitely/missing.ptag"); }) == ErrorCode::IoError);
}
