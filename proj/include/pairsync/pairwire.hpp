#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pairsync/core_time.hpp"
#include "pairsync/syncpipe.hpp"

namespace pairsync::wire {

enum class FrameType : std::uint8_t { Hello = 1, Block = 2, Estimate = 3, Bye = 4 };

inline constexpr std::size_t kMaxPayload = std::size_t{1} << 24;
inline constexpr std::size_t kTagBytes = 32;

using Key = std::array<std::uint8_t, 32>;
using AuthTag = std::array<std::uint8_t, kTagBytes>;

/// Parses 64 hex digits.
Key parse_key_hex(std::string_view hex);

struct Frame {
  FrameType type = FrameType::Hello;
  std::vector<std::uint8_t> payload;
  /// Filled by decode_frame in keyed sessions.
  std::optional<AuthTag> tag;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// length u32 LE (bytes after the length field) + type u8 + payload
/// [+ HMAC-SHA-256(key, type ‖ payload) when keyed].
std::vector<std::uint8_t> encode_frame(const Frame& frame, const Key* key = nullptr);

struct Decoded {
  Frame frame;
  std::size_t consumed = 0;
};

/// Decodes the first frame in `bytes`. Throws Truncated, BadLength, BadType
/// or AuthFail.
Decoded decode_frame(std::span<const std::uint8_t> bytes, const Key* key = nullptr);

/// Splits a byte transcript into frames.
std::vector<Frame> decode_all(std::span<const std::uint8_t> bytes, const Key* key = nullptr);

// ---- payloads -----------------------------------------------------------

struct Hello {
  std::uint8_t protocol_version = 1;
  Party role = Party::Alice;
  bool keyed = false;
  Picoseconds block_ps = 0;
  double shape_f = 0.0;
  double shape_sigma_ps = 0.0;
  Picoseconds coarse_bin_ps = 0;
  Picoseconds coarse_range_ps = 0;
  Picoseconds fine_bin_ps = 0;
  Picoseconds fine_half_window_ps = 0;
  double k_sigma = 0.0;
  double fit_margin_ps = 0.0;

  static Hello from(Party role, bool keyed, const sync::TrackOptions& options);
  friend bool operator==(const Hello&, const Hello&) = default;
};

struct BlockPayload {
  std::uint32_t block_index = 0;
  std::vector<Picoseconds> times_ps;

  friend bool operator==(const BlockPayload&, const BlockPayload&) = default;
};

struct EstimatePayload {
  std::uint32_t block_index = 0;
  bool ok = false;
  double delta_ps = 0.0;
  double sigma_delta_ps = 0.0;
  double round_trip_ps = 0.0;
  Picoseconds epoch_mid_ps = 0;

  friend bool operator==(const EstimatePayload&, const EstimatePayload&) = default;
};

std::vector<std::uint8_t> encode_hello(const Hello& h);
Hello decode_hello(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> encode_block(const BlockPayload& b);
BlockPayload decode_block(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> encode_estimate(const EstimatePayload& e);
EstimatePayload decode_estimate(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> encode_bye(std::uint32_t blocks_sent);
std::uint32_t decode_bye(std::span<const std::uint8_t> payload);

/// Throws ParameterMismatch unless the peers agree on everything but role,
/// and hold opposite roles.
void check_compatible(const Hello& mine, const Hello& theirs);

/// Wire block of a tag: floor(t / T), with tags before the epoch in block 0.
std::uint32_t wire_block_index(Picoseconds t, Picoseconds block_ps);

// ---- transport ----------------------------------------------------------

/// Owning TCP socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept;
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  void send_all(std::span<const std::uint8_t> bytes);
  /// Reads exactly n bytes; returns false on a clean EOF before the first byte.
  bool recv_exact(std::uint8_t* dst, std::size_t n);
  void shutdown_write() noexcept;
  void shutdown_both() noexcept;
  void close() noexcept;

 private:
  int fd_ = -1;
};

class Listener {
 public:
  /// Port 0 picks an ephemeral port.
  Listener(const std::string& host, std::uint16_t port);
  std::uint16_t port() const noexcept { return port_; }
  Socket accept();

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

/// Retries until `timeout_ms` elapses.
Socket connect_tcp(const std::string& host, std::uint16_t port, int timeout_ms = 5000);

/// Reads one whole frame; std::nullopt on clean EOF at a frame boundary.
std::optional<std::vector<std::uint8_t>> read_frame_bytes(Socket& sock);

// ---- session ------------------------------------------------------------

struct SessionConfig {
  Party role = Party::Alice;
  sync::TrackOptions track;
  std::optional<Key> key;
  /// Invoked in block order for every local result.
  std::function<void(const sync::BlockResult&)> on_estimate;
  bool record_transcript = false;
};

struct SessionResult {
  /// Local results; Bob's node reports δ with Bob's sign (−Alice's).
  sync::SyncSeries series;
  /// ESTIMATE frames received from the peer.
  std::vector<EstimatePayload> peer_estimates;
  TagStream peer_tags;
  std::uint64_t late_frames_dropped = 0;
  bool peer_disconnected = false;
  /// Raw received bytes, when requested.
  std::vector<std::uint8_t> transcript;
};

/// Exchanges local tags block by block, runs the per-block pipeline on
/// Alice's blocks once both sides' data (plus one block of lag) are held,
/// and streams estimates back. Throws ParameterMismatch or AuthFail.
SessionResult run_session(Socket socket, const SessionConfig& config, const TagStream& local);

}  // namespace pairsync::wire
