#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "pairsync/error.hpp"
#include "pairsync/pairwire.hpp"

namespace pairsync::wire {

// ---- transport ----------------------------------------------------------

Socket::Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::send_all(std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::PeerDisconnected, std::string("send failed: ") + std::strerror(errno));
    }
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
}

bool Socket::recv_exact(std::uint8_t* dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::PeerDisconnected, std::string("recv failed: ") + std::strerror(errno));
    }
    if (r == 0) {
      if (got == 0) return false;
      throw Error(ErrorCode::Truncated, "connection closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void Socket::shutdown_write() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::shutdown_both() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

namespace {

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) {
    throw Error(ErrorCode::IoError, "cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  return res;
}

}  // namespace

Listener::Listener(const std::string& host, std::uint16_t port) {
  addrinfo* res = resolve(host, port, true);
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.valid()) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(s.fd(), 4) == 0) {
      sockaddr_storage addr{};
      socklen_t len = sizeof addr;
      ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
      port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                               : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
      sock_ = std::move(s);
      break;
    }
  }
  ::freeaddrinfo(res);
  if (!sock_.valid()) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

Socket Listener::accept() {
  for (;;) {
    const int fd = ::accept(sock_.fd(), nullptr, nullptr);
    if (fd >= 0) return Socket(fd);
    if (errno != EINTR) throw Error(ErrorCode::IoError, std::string("accept failed: ") + std::strerror(errno));
  }
}

Socket connect_tcp(const std::string& host, std::uint16_t port, int timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    addrinfo* res = resolve(host, port, false);
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (!s.valid()) continue;
      if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
        ::freeaddrinfo(res);
        int one = 1;
        ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return s;
      }
    }
    ::freeaddrinfo(res);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw Error(ErrorCode::IoError, "cannot connect to " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

std::optional<std::vector<std::uint8_t>> read_frame_bytes(Socket& sock) {
  std::vector<std::uint8_t> buf(4);
  if (!sock.recv_exact(buf.data(), 4)) return std::nullopt;
  std::uint32_t length = 0;
  for (int i = 0; i < 4; ++i) length |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  if (length == 0 || length > 1 + kTagBytes + kMaxPayload) {
    throw Error(ErrorCode::BadLength, "frame length " + std::to_string(length) + " out of range");
  }
  buf.resize(4 + length);
  if (!sock.recv_exact(buf.data() + 4, length)) throw Error(ErrorCode::Truncated, "connection closed mid-frame");
  return buf;
}

// ---- session ------------------------------------------------------------

namespace {

/// Frames queued by the session and written by a dedicated thread, so
/// sending never waits on receiving.
class Outbox {
 public:
  Outbox(Socket& sock, const Key* key) : sock_(sock), key_(key), writer_([this] { run(); }) {}
  ~Outbox() { finish(); }

  void push(FrameType type, std::vector<std::uint8_t> payload) {
    auto bytes = encode_frame(Frame{type, std::move(payload), std::nullopt}, key_);
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(bytes));
    }
    cv_.notify_one();
  }

  /// Drains the queue, half-closes the connection and joins the writer.
  void finish() {
    if (!writer_.joinable()) return;
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_one();
    if (writer_.joinable()) writer_.join();
  }

 private:
  void run() {
    for (;;) {
      std::vector<std::uint8_t> bytes;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
        if (queue_.empty()) break;
        bytes = std::move(queue_.front());
        queue_.pop_front();
      }
      try {
        sock_.send_all(bytes);
      } catch (const Error&) {
        return;  // peer went away; the receive side reports it
      }
    }
    sock_.shutdown_write();
  }

  Socket& sock_;
  const Key* key_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> queue_;
  bool closed_ = false;
  std::thread writer_;
};

struct PartyData {
  std::map<std::uint32_t, std::vector<TimeTag>> blocks;
  std::int64_t highest = -1;
  bool done = false;
  std::uint32_t total = 0;

  /// Block k is final once a later block arrived or the sender finished.
  bool final_through(std::int64_t k) const { return done || highest > k; }
};

std::map<std::uint32_t, std::vector<TimeTag>> group_by_block(const TagStream& s, Picoseconds block_ps) {
  std::map<std::uint32_t, std::vector<TimeTag>> out;
  for (const auto& t : s.tags) out[wire_block_index(t.time_ps, block_ps)].push_back(t);
  return out;
}

}  // namespace

SessionResult run_session(Socket socket, const SessionConfig& config, const TagStream& local) {
  const auto& opts = config.track;
  if (opts.block_ps <= 0) throw Error(ErrorCode::InvalidArgument, "block length must be positive");
  if (opts.locate.coarse_range_ps > opts.block_ps) {
    throw Error(ErrorCode::InvalidArgument, "coarse search range must not exceed the block length");
  }
  validate(local);
  if (config.role == Party::Alice && !local.empty() && local.tags.front().time_ps < 0) {
    throw Error(ErrorCode::InvalidArgument, "Alice's tags must not precede the session epoch");
  }
  const Key* key = config.key ? &*config.key : nullptr;
  const Party me = config.role;
  const Party peer = other(me);

  SessionResult result;
  result.series.block_ps = opts.block_ps;
  result.peer_tags.party = peer;

  PartyData data[2];
  auto& mine = data[static_cast<int>(me)];
  auto& theirs = data[static_cast<int>(peer)];
  mine.blocks = group_by_block(local, opts.block_ps);
  mine.done = true;
  mine.total = mine.blocks.empty() ? 0 : mine.blocks.rbegin()->first + 1;
  mine.highest = static_cast<std::int64_t>(mine.total) - 1;

  Outbox out(socket, key);
  const Hello hello = Hello::from(me, key != nullptr, opts);
  out.push(FrameType::Hello, encode_hello(hello));
  for (std::uint32_t k = 0; k < mine.total; ++k) {
    BlockPayload bp{k, {}};
    if (auto it = mine.blocks.find(k); it != mine.blocks.end()) {
      bp.times_ps.reserve(it->second.size());
      for (const auto& t : it->second) bp.times_ps.push_back(t.time_ps);
    }
    out.push(FrameType::Block, encode_block(bp));
  }
  out.push(FrameType::Bye, encode_bye(mine.total));

  auto& alice = data[static_cast<int>(Party::Alice)];
  auto& bob = data[static_cast<int>(Party::Bob)];
  std::uint32_t next_block = 0;
  // Lowered on a disconnect to the blocks the peer actually delivered.
  std::uint32_t limit = std::numeric_limits<std::uint32_t>::max();

  auto concat = [](const PartyData& p, std::int64_t from, std::int64_t to) {
    std::vector<TimeTag> tags;
    for (std::int64_t k = std::max<std::int64_t>(from, 0); k <= to; ++k) {
      if (auto it = p.blocks.find(static_cast<std::uint32_t>(k)); it != p.blocks.end()) {
        tags.insert(tags.end(), it->second.begin(), it->second.end());
      }
    }
    return tags;
  };

  auto process_ready = [&] {
    while (alice.final_through(next_block) && bob.final_through(next_block + 1)) {
      if (alice.done && next_block >= alice.total) return;
      if (next_block >= limit) return;
      const std::uint32_t k = next_block++;
      auto alice_tags_it = alice.blocks.find(k);
      static const std::vector<TimeTag> kEmpty;
      const auto& alice_tags = alice_tags_it == alice.blocks.end() ? kEmpty : alice_tags_it->second;
      Block blk;
      blk.index = k;
      blk.t_start_ps = static_cast<Picoseconds>(k) * opts.block_ps;
      blk.t_end_ps = blk.t_start_ps + opts.block_ps;
      blk.partial = alice.done && k + 1 == alice.total;
      blk.tags = alice_tags;
      const auto bob_tags = concat(bob, static_cast<std::int64_t>(k) - 1, static_cast<std::int64_t>(k) + 1);

      sync::BlockResult res;
      res.block_index = k;
      res.epoch_mid_ps = blk.mid_ps();
      res.partial = blk.partial;
      try {
        res.estimate = sync::estimate_block(blk, bob_tags, opts);
        if (me == Party::Bob) res.estimate->delta_ps = -res.estimate->delta_ps;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) throw;
        res.failure = e.code();
        res.failure_message = e.what();
      }
      EstimatePayload ep;
      ep.block_index = k;
      ep.epoch_mid_ps = res.epoch_mid_ps;
      if (res.estimate) {
        ep.ok = true;
        ep.delta_ps = res.estimate->delta_ps;
        ep.sigma_delta_ps = res.estimate->sigma_delta_ps;
        ep.round_trip_ps = res.estimate->round_trip_ps;
      }
      out.push(FrameType::Estimate, encode_estimate(ep));
      if (config.on_estimate) config.on_estimate(res);
      result.series.blocks.push_back(std::move(res));
    }
  };

  bool have_hello = false;
  try {
    for (;;) {
      std::optional<std::vector<std::uint8_t>> bytes;
      try {
        bytes = read_frame_bytes(socket);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::PeerDisconnected && e.code() != ErrorCode::Truncated) throw;
        result.peer_disconnected = true;
        break;
      }
      if (!bytes) {
        if (!theirs.done) result.peer_disconnected = true;
        break;
      }
      if (config.record_transcript) {
        result.transcript.insert(result.transcript.end(), bytes->begin(), bytes->end());
      }
      Frame frame = decode_frame(*bytes, key).frame;

      if (!have_hello) {
        if (frame.type != FrameType::Hello) {
          throw Error(ErrorCode::ParameterMismatch, "peer did not open with HELLO");
        }
        Hello theirs_hello;
        try {
          theirs_hello = decode_hello(frame.payload);
        } catch (const Error&) {
          throw Error(ErrorCode::ParameterMismatch,
                      key ? "malformed HELLO from peer" : "peer HELLO carries an authentication tag");
        }
        check_compatible(hello, theirs_hello);
        have_hello = true;
        continue;
      }

      switch (frame.type) {
        case FrameType::Hello:
          throw Error(ErrorCode::ParameterMismatch, "duplicate HELLO");
        case FrameType::Block: {
          BlockPayload bp = decode_block(frame.payload);
          if (theirs.done || static_cast<std::int64_t>(bp.block_index) <= theirs.highest) {
            ++result.late_frames_dropped;
            break;
          }
          auto& dst = theirs.blocks[bp.block_index];
          dst.reserve(bp.times_ps.size());
          for (const auto t : bp.times_ps) {
            if (!dst.empty() && t < dst.back().time_ps) {
              throw Error(ErrorCode::NonMonotonic, "peer block " + std::to_string(bp.block_index) + " is unsorted");
            }
            dst.push_back({t, kLocalDetector});
            result.peer_tags.tags.push_back({t, kLocalDetector});
          }
          theirs.highest = bp.block_index;
          break;
        }
        case FrameType::Bye:
          theirs.total = decode_bye(frame.payload);
          theirs.done = true;
          break;
        case FrameType::Estimate:
          result.peer_estimates.push_back(decode_estimate(frame.payload));
          break;
      }
      process_ready();
      // Our last ESTIMATE is queued: half-close so the peer's read loop can end.
      if (theirs.done && next_block >= alice.total) out.finish();
    }
    if (!have_hello) throw Error(ErrorCode::PeerDisconnected, "peer closed the connection before HELLO");
    if (!theirs.done) {
      theirs.total = static_cast<std::uint32_t>(theirs.highest + 1);
      limit = theirs.total;
      theirs.done = true;
    }
    process_ready();
  } catch (...) {
    socket.shutdown_both();
    out.finish();
    throw;
  }
  out.finish();
  return result;
}

}  // namespace pairsync::wire
