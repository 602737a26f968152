#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <bit>
#include <cstring>

#include "pairsync/error.hpp"
#include "pairsync/pairwire.hpp"

namespace pairsync::wire {

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get() {
    using U = std::make_unsigned_t<T>;
    if (bytes_.size() - pos_ < sizeof(T)) throw Error(ErrorCode::Truncated, "payload truncated");
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0) throw Error(ErrorCode::BadLength, "unexpected bytes after payload");
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

AuthTag mac(const Key& key, std::span<const std::uint8_t> data) {
  AuthTag out{};
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
            out.data(), &len) ||
      len != out.size()) {
    throw Error(ErrorCode::AuthFail, "HMAC computation failed");
  }
  return out;
}

bool known_type(std::uint8_t t) { return t >= 1 && t <= 4; }

}  // namespace

Key parse_key_hex(std::string_view hex) {
  if (hex.size() != 64) throw Error(ErrorCode::InvalidArgument, "shared key must be 64 hex digits");
  Key key{};
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  for (std::size_t i = 0; i < key.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::InvalidArgument, "shared key is not hex");
    key[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return key;
}

std::vector<std::uint8_t> encode_frame(const Frame& frame, const Key* key) {
  if (frame.payload.size() > kMaxPayload) {
    throw Error(ErrorCode::BadLength, "frame payload exceeds 2^24 bytes");
  }
  if (!known_type(static_cast<std::uint8_t>(frame.type))) throw Error(ErrorCode::BadType, "unknown frame type");
  const std::size_t body = 1 + frame.payload.size() + (key ? kTagBytes : 0);
  std::vector<std::uint8_t> out;
  out.reserve(4 + body);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(body >> (8 * i)));
  out.push_back(static_cast<std::uint8_t>(frame.type));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  if (key) {
    const AuthTag tag = mac(*key, std::span(out).subspan(4));
    out.insert(out.end(), tag.begin(), tag.end());
  }
  return out;
}

Decoded decode_frame(std::span<const std::uint8_t> bytes, const Key* key) {
  if (bytes.size() < 4) throw Error(ErrorCode::Truncated, "frame length field truncated");
  std::uint32_t length = 0;
  for (int i = 0; i < 4; ++i) length |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  const std::size_t overhead = 1 + (key ? kTagBytes : 0);
  if (length < overhead || length > overhead + kMaxPayload) {
    throw Error(ErrorCode::BadLength, "frame length " + std::to_string(length) + " out of range");
  }
  if (bytes.size() - 4 < length) throw Error(ErrorCode::Truncated, "frame body truncated");
  const auto body = bytes.subspan(4, length);
  if (!known_type(body[0])) throw Error(ErrorCode::BadType, "unknown frame type " + std::to_string(body[0]));

  Decoded d;
  d.consumed = 4 + length;
  d.frame.type = static_cast<FrameType>(body[0]);
  const std::size_t payload_len = length - overhead;
  d.frame.payload.assign(body.begin() + 1, body.begin() + 1 + static_cast<std::ptrdiff_t>(payload_len));
  if (key) {
    const AuthTag expected = mac(*key, body.first(1 + payload_len));
    AuthTag got{};
    std::memcpy(got.data(), body.data() + 1 + payload_len, kTagBytes);
    if (CRYPTO_memcmp(expected.data(), got.data(), kTagBytes) != 0) {
      throw Error(ErrorCode::AuthFail, "frame authentication tag mismatch");
    }
    d.frame.tag = got;
  }
  return d;
}

std::vector<Frame> decode_all(std::span<const std::uint8_t> bytes, const Key* key) {
  std::vector<Frame> frames;
  while (!bytes.empty()) {
    auto d = decode_frame(bytes, key);
    frames.push_back(std::move(d.frame));
    bytes = bytes.subspan(d.consumed);
  }
  return frames;
}

Hello Hello::from(Party role, bool keyed, const sync::TrackOptions& o) {
  Hello h;
  h.role = role;
  h.keyed = keyed;
  h.block_ps = o.block_ps;
  h.shape_f = o.shape.f;
  h.shape_sigma_ps = o.shape.sigma_ps;
  h.coarse_bin_ps = o.locate.coarse_bin_ps;
  h.coarse_range_ps = o.locate.coarse_range_ps;
  h.fine_bin_ps = o.locate.fine_bin_ps;
  h.fine_half_window_ps = o.locate.fine_half_window_ps;
  h.k_sigma = o.locate.k_sigma;
  h.fit_margin_ps = o.fit.margin_ps;
  return h;
}

std::vector<std::uint8_t> encode_hello(const Hello& h) {
  Writer w;
  w.put<std::uint8_t>(h.protocol_version);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.role));
  w.put<std::uint8_t>(h.keyed ? 1 : 0);
  w.put<std::int64_t>(h.block_ps);
  w.put_f64(h.shape_f);
  w.put_f64(h.shape_sigma_ps);
  w.put<std::int64_t>(h.coarse_bin_ps);
  w.put<std::int64_t>(h.coarse_range_ps);
  w.put<std::int64_t>(h.fine_bin_ps);
  w.put<std::int64_t>(h.fine_half_window_ps);
  w.put_f64(h.k_sigma);
  w.put_f64(h.fit_margin_ps);
  return std::move(w.bytes);
}

Hello decode_hello(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  Hello h;
  h.protocol_version = r.get<std::uint8_t>();
  const auto role = r.get<std::uint8_t>();
  if (role > 1) throw Error(ErrorCode::ParameterMismatch, "HELLO carries an unknown role");
  h.role = static_cast<Party>(role);
  h.keyed = r.get<std::uint8_t>() != 0;
  h.block_ps = r.get<std::int64_t>();
  h.shape_f = r.get_f64();
  h.shape_sigma_ps = r.get_f64();
  h.coarse_bin_ps = r.get<std::int64_t>();
  h.coarse_range_ps = r.get<std::int64_t>();
  h.fine_bin_ps = r.get<std::int64_t>();
  h.fine_half_window_ps = r.get<std::int64_t>();
  h.k_sigma = r.get_f64();
  h.fit_margin_ps = r.get_f64();
  r.expect_end();
  return h;
}

std::vector<std::uint8_t> encode_block(const BlockPayload& b) {
  if (8 + 8 * b.times_ps.size() > kMaxPayload) {
    throw Error(ErrorCode::BadLength, "block " + std::to_string(b.block_index) +
                                          " holds too many tags for one frame");
  }
  Writer w;
  w.bytes.reserve(8 + 8 * b.times_ps.size());
  w.put<std::uint32_t>(b.block_index);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.times_ps.size()));
  for (auto t : b.times_ps) w.put<std::int64_t>(t);
  return std::move(w.bytes);
}

BlockPayload decode_block(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  BlockPayload b;
  b.block_index = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  if (r.remaining() != std::size_t{count} * 8) {
    throw Error(ErrorCode::BadLength, "BLOCK count does not match payload length");
  }
  b.times_ps.resize(count);
  for (auto& t : b.times_ps) t = r.get<std::int64_t>();
  return b;
}

std::vector<std::uint8_t> encode_estimate(const EstimatePayload& e) {
  Writer w;
  w.put<std::uint32_t>(e.block_index);
  w.put<std::uint8_t>(e.ok ? 1 : 0);
  w.put_f64(e.delta_ps);
  w.put_f64(e.sigma_delta_ps);
  w.put_f64(e.round_trip_ps);
  w.put<std::int64_t>(e.epoch_mid_ps);
  return std::move(w.bytes);
}

EstimatePayload decode_estimate(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  EstimatePayload e;
  e.block_index = r.get<std::uint32_t>();
  e.ok = r.get<std::uint8_t>() != 0;
  e.delta_ps = r.get_f64();
  e.sigma_delta_ps = r.get_f64();
  e.round_trip_ps = r.get_f64();
  e.epoch_mid_ps = r.get<std::int64_t>();
  r.expect_end();
  return e;
}

std::vector<std::uint8_t> encode_bye(std::uint32_t blocks_sent) {
  Writer w;
  w.put<std::uint32_t>(blocks_sent);
  return std::move(w.bytes);
}

std::uint32_t decode_bye(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  const auto n = r.get<std::uint32_t>();
  r.expect_end();
  return n;
}

void check_compatible(const Hello& mine, const Hello& theirs) {
  auto mismatch = [](const std::string& what) {
    throw Error(ErrorCode::ParameterMismatch, "peer disagrees on " + what);
  };
  if (theirs.protocol_version != mine.protocol_version) mismatch("protocol version");
  if (theirs.role == mine.role) mismatch("role (both peers claim the same party)");
  if (theirs.keyed != mine.keyed) mismatch("authentication (keyed vs unkeyed)");
  if (theirs.block_ps != mine.block_ps) mismatch("block length");
  if (theirs.shape_f != mine.shape_f || theirs.shape_sigma_ps != mine.shape_sigma_ps) mismatch("peak shape");
  if (theirs.coarse_bin_ps != mine.coarse_bin_ps || theirs.coarse_range_ps != mine.coarse_range_ps ||
      theirs.fine_bin_ps != mine.fine_bin_ps || theirs.fine_half_window_ps != mine.fine_half_window_ps ||
      theirs.k_sigma != mine.k_sigma) {
    mismatch("peak search parameters");
  }
  if (theirs.fit_margin_ps != mine.fit_margin_ps) mismatch("fit window");
}

std::uint32_t wire_block_index(Picoseconds t, Picoseconds block_ps) {
  if (t < 0) return 0;
  return static_cast<std::uint32_t>(t / block_ps);
}

}  // namespace pairsync::wire
