#include <doctest.h>

#include <algorithm>
#include <random>
#include <thread>

#include "pairsync/clocksim.hpp"
#include "pairsync/pairwire.hpp"
#include "session_support.hpp"
#include "test_support.hpp"

using namespace pairsync;
using namespace pairsync::wire;
using testsupport::PairOutcome;
using testsupport::run_pair;

namespace {

Key counting_key() {
  Key k{};
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<std::uint8_t>(i);
  return k;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoi(std::string(hex.substr(i, 2)), nullptr, 16)));
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

sync::TrackOptions session_options() {
  sync::TrackOptions o;
  o.threads = 1;
  return o;
}

}  // namespace

TEST_CASE("unkeyed empty HELLO frame bytes") {
  const Frame f{FrameType::Hello, {}, std::nullopt};
  const auto bytes = encode_frame(f);
  CHECK(bytes == std::vector<std::uint8_t>{0x01, 0x00, 0x00, 0x00, 0x01});
  const auto d = decode_frame(bytes);
  CHECK(d.consumed == 5);
  CHECK(d.frame == f);
}

TEST_CASE("keyed frames carry HMAC-SHA-256 over type and payload") {
  const Key key = counting_key();
  const auto hello = encode_frame({FrameType::Hello, {}, std::nullopt}, &key);
  auto expected = std::vector<std::uint8_t>{0x21, 0x00, 0x00, 0x00, 0x01};
  const auto tag = from_hex("9b4c8120a4823a95f47cde17a244f4507244ee6e3957d1fab9fa29b44d3829b7");
  expected.insert(expected.end(), tag.begin(), tag.end());
  CHECK(hello == expected);

  const auto payload = encode_block({7, {123456789}});
  CHECK(payload == from_hex("0700000001000000" "15cd5b0700000000"));
  const auto block = encode_frame({FrameType::Block, payload, std::nullopt}, &key);
  CHECK(std::vector<std::uint8_t>(block.end() - 32, block.end()) ==
        from_hex("4edb25edc63348ff69de3a69d71a549e705de3e6e39f1cac44f76e3e97eaec5d"));
  const auto d = decode_frame(block, &key);
  REQUIRE(d.frame.tag.has_value());
  CHECK(decode_block(d.frame.payload) == BlockPayload{7, {123456789}});
}

TEST_CASE("randomized frame round trips") {
  std::mt19937_64 rng(9);
  const Key key = counting_key();
  std::uniform_int_distribution<int> type(1, 4), len(0, 3000), byte(0, 255);
  std::vector<std::uint8_t> stream;
  std::vector<Frame> sent;
  for (int i = 0; i < 300; ++i) {
    Frame f{static_cast<FrameType>(type(rng)), {}, std::nullopt};
    f.payload.resize(static_cast<std::size_t>(len(rng)));
    for (auto& b : f.payload) b = static_cast<std::uint8_t>(byte(rng));
    const bool keyed = i % 2;
    const auto bytes = encode_frame(f, keyed ? &key : nullptr);
    CHECK(bytes.size() == 5 + f.payload.size() + (keyed ? 32 : 0));
    const auto d = decode_frame(bytes, keyed ? &key : nullptr);
    CHECK(d.consumed == bytes.size());
    CHECK(d.frame.type == f.type);
    CHECK(d.frame.payload == f.payload);
    CHECK(d.frame.tag.has_value() == keyed);
    if (keyed) {
      stream.insert(stream.end(), bytes.begin(), bytes.end());
      sent.push_back(f);
    }
  }
  const auto all = decode_all(stream, &key);
  REQUIRE(all.size() == sent.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].payload == sent[i].payload);
}

TEST_CASE("any flipped bit in a keyed frame fails authentication") {
  const Key key = counting_key();
  const auto bytes = encode_frame({FrameType::Block, encode_block({3, {1, 2, 3, 4}}), std::nullopt}, &key);
  for (std::size_t i = 5; i < bytes.size(); ++i) {
    for (int bit = 0; bit < 8; bit += 3) {
      auto bad = bytes;
      bad[i] ^= static_cast<std::uint8_t>(1 << bit);
      CHECK(code_of([&] { decode_frame(bad, &key); }) == ErrorCode::AuthFail);
    }
  }
  Key other = key;
  other[0] ^= 1;
  CHECK(code_of([&] { decode_frame(bytes, &other); }) == ErrorCode::AuthFail);
}

TEST_CASE("malformed frames") {
  CHECK(code_of([] { decode_frame(std::vector<std::uint8_t>{0x01, 0x00}); }) == ErrorCode::Truncated);
  CHECK(code_of([] { decode_frame(std::vector<std::uint8_t>{0x05, 0x00, 0x00, 0x00, 0x02, 0x00}); }) ==
        ErrorCode::Truncated);
  CHECK(code_of([] { decode_frame(std::vector<std::uint8_t>{0x00, 0x00, 0x00, 0x00}); }) == ErrorCode::BadLength);
  CHECK(code_of([] { decode_frame(std::vector<std::uint8_t>{0xff, 0xff, 0xff, 0x7f, 0x01}); }) ==
        ErrorCode::BadLength);
  CHECK(code_of([] { decode_frame(std::vector<std::uint8_t>{0x01, 0x00, 0x00, 0x00, 0x09}); }) == ErrorCode::BadType);
  CHECK(code_of([] { decode_frame(std::vector<std::uint8_t>{0x01, 0x00, 0x00, 0x00, 0x00}); }) == ErrorCode::BadType);
  const Key key = counting_key();
  // Unkeyed frame read by a keyed reader: too short to carry a tag.
  CHECK(code_of([&] { decode_frame(encode_frame({FrameType::Bye, encode_bye(1), std::nullopt}), &key); }) ==
        ErrorCode::BadLength);
  Frame huge{FrameType::Block, std::vector<std::uint8_t>(kMaxPayload + 1), std::nullopt};
  CHECK(code_of([&] { encode_frame(huge); }) == ErrorCode::BadLength);
  CHECK(code_of([&] { encode_frame({static_cast<FrameType>(7), {}, std::nullopt}); }) == ErrorCode::BadType);
}

TEST_CASE("payload codecs") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    BlockPayload b{static_cast<std::uint32_t>(rng()), {}};
    const auto n = rng() % 200;
    for (std::size_t k = 0; k < n; ++k) b.times_ps.push_back(static_cast<Picoseconds>(rng()));
    CHECK(decode_block(encode_block(b)) == b);
  }
  EstimatePayload e{12, true, -1234.5, 3.25, 80000.125, 250 * kPsPerSecond};
  CHECK(decode_estimate(encode_estimate(e)) == e);
  CHECK(decode_bye(encode_bye(77)) == 77);
  CHECK(encode_bye(0x01020304) == std::vector<std::uint8_t>{4, 3, 2, 1});

  auto h = Hello::from(Party::Bob, true, sync::TrackOptions{});
  CHECK(decode_hello(encode_hello(h)) == h);
  CHECK(h.block_ps == 20 * kPsPerSecond);

  auto bad = encode_block({1, {5, 6}});
  bad.pop_back();
  CHECK(code_of([&] { decode_block(bad); }) == ErrorCode::BadLength);
  CHECK(code_of([] { decode_block(std::vector<std::uint8_t>{1, 0}); }) == ErrorCode::Truncated);
  auto long_bye = encode_bye(1);
  long_bye.push_back(0);
  CHECK(code_of([&] { decode_bye(long_bye); }) == ErrorCode::BadLength);
}

TEST_CASE("HELLO compatibility") {
  const sync::TrackOptions o;
  const auto a = Hello::from(Party::Alice, false, o);
  const auto b = Hello::from(Party::Bob, false, o);
  CHECK_NOTHROW(check_compatible(a, b));
  CHECK(code_of([&] { check_compatible(a, a); }) == ErrorCode::ParameterMismatch);
  auto t = b;
  t.block_ps += 1;
  CHECK(code_of([&] { check_compatible(a, t); }) == ErrorCode::ParameterMismatch);
  t = b;
  t.shape_sigma_ps = 300.0;
  CHECK(code_of([&] { check_compatible(a, t); }) == ErrorCode::ParameterMismatch);
  t = b;
  t.keyed = true;
  CHECK(code_of([&] { check_compatible(a, t); }) == ErrorCode::ParameterMismatch);
  t = b;
  t.fine_bin_ps = 8;
  CHECK(code_of([&] { check_compatible(a, t); }) == ErrorCode::ParameterMismatch);
}

TEST_CASE("keys and block indices") {
  const auto k = parse_key_hex("000102030405060708090a0b0c0d0e0f101112131415161718191A1B1C1D1E1F");
  CHECK(k == counting_key());
  CHECK_THROWS_AS(parse_key_hex("0001"), Error);
  CHECK_THROWS_AS(parse_key_hex(std::string(64, 'g')), Error);
  CHECK(wire_block_index(0, 20) == 0);
  CHECK(wire_block_index(19, 20) == 0);
  CHECK(wire_block_index(20, 20) == 1);
  CHECK(wire_block_index(-5, 20) == 0);
}

TEST_CASE("loopback session reproduces offline tracking") {
  auto cfg = testsupport::simple_config(100.0, 61, -4321.0, 8333.0);
  const auto r = sim::simulate_two_party(cfg);
  const auto offline = sync::track(r.alice, r.bob, session_options());

  for (bool keyed : {false, true}) {
    CAPTURE(keyed);
    SessionConfig ca, cb;
    ca.track = cb.track = session_options();
    if (keyed) ca.key = cb.key = counting_key();
    ca.record_transcript = cb.record_transcript = true;
    std::vector<std::uint64_t> order;
    ca.on_estimate = [&](const sync::BlockResult& b) { order.push_back(b.block_index); };
    const auto out = run_pair(r.alice, r.bob, ca, cb);
    REQUIRE_FALSE(out.alice_error);
    REQUIRE_FALSE(out.bob_error);
    const auto& a = out.alice->series;
    const auto& b = out.bob->series;
    REQUIRE(a.blocks.size() == offline.blocks.size());
    REQUIRE(b.blocks.size() == offline.blocks.size());
    for (std::size_t k = 0; k < a.blocks.size(); ++k) {
      CHECK(order[k] == k);
      REQUIRE(a.blocks[k].ok());
      CHECK(*a.blocks[k].estimate == *offline.blocks[k].estimate);
      auto mirrored = *b.blocks[k].estimate;
      CHECK(mirrored.delta_ps == -a.blocks[k].estimate->delta_ps);
      mirrored.delta_ps = -mirrored.delta_ps;
      CHECK(mirrored == *a.blocks[k].estimate);
    }
    CHECK(out.alice->peer_estimates.size() == offline.blocks.size());
    CHECK(out.bob->peer_estimates.size() == offline.blocks.size());
    CHECK(out.alice->peer_estimates[0].delta_ps == b.blocks[0].estimate->delta_ps);
    CHECK_FALSE(out.alice->peer_disconnected);
    CHECK(out.alice->late_frames_dropped == 0);

    // The received bytes alone reconstruct the peer's stream.
    CHECK(out.bob->peer_tags.tags == r.alice.tags);
    CHECK(out.alice->peer_tags.tags == r.bob.tags);
    const Key key = counting_key();
    TagStream replayed;
    for (const auto& f : decode_all(out.bob->transcript, keyed ? &key : nullptr)) {
      if (f.type != FrameType::Block) continue;
      for (auto t : decode_block(f.payload).times_ps) replayed.tags.push_back({t, kLocalDetector});
    }
    CHECK(replayed.tags == r.alice.tags);
  }
}

TEST_CASE("session parameter and key mismatches are rejected") {
  auto cfg = testsupport::simple_config(40.0, 62, 0.0, 8333.0);
  const auto r = sim::simulate_two_party(cfg);
  SessionConfig ca, cb;
  ca.track = cb.track = session_options();

  // A side either rejects the peer itself or, when the peer aborted first,
  // sees the connection drop before HELLO.
  auto rejected = [](const std::optional<SessionResult>& res, const std::optional<ErrorCode>& err,
                     std::initializer_list<ErrorCode> codes) {
    if (res) return false;
    return *err == ErrorCode::PeerDisconnected || std::find(codes.begin(), codes.end(), *err) != codes.end();
  };
  auto rejected_itself = [](const std::optional<ErrorCode>& a, const std::optional<ErrorCode>& b) {
    return (a && *a != ErrorCode::PeerDisconnected) || (b && *b != ErrorCode::PeerDisconnected);
  };

  SUBCASE("block length") {
    cb.track.block_ps = 10 * kPsPerSecond;
    const auto out = run_pair(r.alice, r.bob, ca, cb);
    CHECK(rejected(out.alice, out.alice_error, {ErrorCode::ParameterMismatch}));
    CHECK(rejected(out.bob, out.bob_error, {ErrorCode::ParameterMismatch}));
    CHECK(rejected_itself(out.alice_error, out.bob_error));
  }
  SUBCASE("keyed against unkeyed") {
    ca.key = counting_key();
    const auto out = run_pair(r.alice, r.bob, ca, cb);
    CHECK(rejected(out.alice, out.alice_error, {ErrorCode::AuthFail, ErrorCode::ParameterMismatch}));
    CHECK(rejected(out.bob, out.bob_error, {ErrorCode::ParameterMismatch}));
    CHECK(rejected_itself(out.alice_error, out.bob_error));
  }
  SUBCASE("different keys") {
    ca.key = counting_key();
    cb.key = counting_key();
    (*cb.key)[31] ^= 0x80;
    const auto out = run_pair(r.alice, r.bob, ca, cb);
    CHECK(rejected(out.alice, out.alice_error, {ErrorCode::AuthFail}));
    CHECK(rejected(out.bob, out.bob_error, {ErrorCode::AuthFail}));
    CHECK(rejected_itself(out.alice_error, out.bob_error));
  }
}

TEST_CASE("tampered BLOCK frame aborts before that block is processed") {
  auto cfg = testsupport::simple_config(200.0, 63, 900.0, 8333.0);
  const auto r = sim::simulate_two_party(cfg);
  SessionConfig ca, cb;
  ca.track = cb.track = session_options();
  ca.key = cb.key = counting_key();
  std::vector<std::uint64_t> bob_processed;
  cb.on_estimate = [&](const sync::BlockResult& b) { bob_processed.push_back(b.block_index); };

  const std::uint32_t target = 5;
  bool tampered = false;
  const auto out = run_pair(r.alice, r.bob, ca, cb, [&](std::vector<std::uint8_t>& f) {
    if (f[4] != static_cast<std::uint8_t>(FrameType::Block)) return;
    const std::uint32_t idx = f[5] | f[6] << 8 | f[7] << 16 | static_cast<std::uint32_t>(f[8]) << 24;
    if (idx != target) return;
    f[13 + 8 * 10] ^= 0x01;  // low byte of the 11th timestamp
    tampered = true;
  });
  CHECK(tampered);
  CHECK(out.bob_error == ErrorCode::AuthFail);
  for (auto k : bob_processed) CHECK(k < target);
  // Alice already holds all of Bob's blocks, so she may finish; she must not hang or fail on auth.
  CHECK(out.alice_error != ErrorCode::AuthFail);
}

TEST_CASE("early disconnect finalizes with a partial series") {
  auto cfg = testsupport::simple_config(200.0, 64, 0.0, 8333.0);
  const auto r = sim::simulate_two_party(cfg);
  SessionConfig ca, cb;
  ca.track = cb.track = session_options();
  // The proxy drops Alice's frames after block 4 and the BYE, then closes.
  bool closing = false;
  const auto out = run_pair(r.alice, r.bob, ca, cb, [&](std::vector<std::uint8_t>& f) {
    if (f[4] == static_cast<std::uint8_t>(FrameType::Block) && f[5] >= 5) closing = true;
    if (closing && f[4] != static_cast<std::uint8_t>(FrameType::Estimate)) {
      // Forward only a truncated prefix, as if the link died mid-frame.
      f.resize(6);
    }
  });
  REQUIRE(out.bob.has_value());
  CHECK(out.bob->peer_disconnected);
  CHECK(out.bob->series.blocks.size() >= 4);
  CHECK(out.bob->series.blocks.size() < 10);
}

TEST_CASE("a peer that hangs up before HELLO yields no results") {
  auto cfg = testsupport::simple_config(40.0, 65, 0.0, 8333.0);
  const auto r = sim::simulate_two_party(cfg);
  Listener listener("127.0.0.1", 0);
  std::thread silent([&] { listener.accept().close(); });
  SessionConfig ca;
  ca.track = session_options();
  CHECK(code_of([&] { run_session(connect_tcp("127.0.0.1", listener.port()), ca, r.alice); }) ==
        ErrorCode::PeerDisconnected);
  silent.join();
}
