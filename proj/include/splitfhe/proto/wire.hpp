#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "splitfhe/bytes.hpp"
#include "splitfhe/enc/tensor.hpp"

namespace splitfhe::proto {

inline constexpr std::uint16_t kProtocolVersion = 1;
// "SFP1" | version u16 | msg_type u8 | length u64
inline constexpr std::size_t kFrameHeaderBytes = 4 + 2 + 1 + 8;
// Refuse frames above this size before allocating (Paper128 key material is ~620 MB).
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{4} << 30;

enum class MsgType : std::uint8_t {
  Hello = 1,
  KeyMaterial = 2,
  ModelDeploy = 3,
  EncInput = 4,
  EncIntermediate = 5,
  EncActivations = 6,
  EncPrediction = 7,
  Error = 8,
};

const char* msg_name(MsgType t);

struct Frame {
  std::uint16_t version = kProtocolVersion;
  MsgType type = MsgType::Error;
  Bytes payload;
};

Bytes encode_frame(const Frame& f);
// Parses exactly one frame; throws FormatError on bad magic, unknown type or
// a length that disagrees with the buffer.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Called with every complete frame a connection sends or receives.
using FrameTap = std::function<void(bool outbound, std::span<const std::uint8_t> frame)>;

// Owning TCP stream socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_), tap_(std::move(o.tap_)) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  static Socket connect(const std::string& host, std::uint16_t port);

  void send_frame(const Frame& f);
  // Throws IoError when the peer closes before a whole frame arrives.
  Frame recv_frame();
  void set_tap(FrameTap tap) { tap_ = std::move(tap); }

  void shutdown();
  void close();
  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  void write_all(const std::uint8_t* p, std::size_t n);
  void read_all(std::uint8_t* p, std::size_t n);

  int fd_ = -1;
  FrameTap tap_;
};

class Listener {
 public:
  // port 0 picks a free port; see port().
  Listener(const std::string& host, std::uint16_t port);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  // Blocks until a client connects; returns an invalid socket after shutdown().
  Socket accept();
  std::uint16_t port() const { return port_; }
  void shutdown();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// "host:port" or ":port" / "port" (host defaults to 127.0.0.1).
std::pair<std::string, std::uint16_t> parse_address(const std::string& addr);

// Packed tensor payloads: layout u8 | ndim u32 | dims u32... | block u32 |
// period u32 | index count u32 | indices u32... | ct count u32 | ciphertexts.
void serialize_packed(const enc::PackedCiphertextTensor& x, ByteWriter& w);
enc::PackedCiphertextTensor deserialize_packed(ByteReader& r, const he::CkksContext& ctx);

}  // namespace splitfhe::proto
