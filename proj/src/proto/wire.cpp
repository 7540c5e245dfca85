#include "splitfhe/proto/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "splitfhe/error.hpp"

namespace splitfhe::proto {

namespace {

constexpr char kMagic[] = "SFP1";

std::string errno_text() { return std::strerror(errno); }

bool valid_type(std::uint8_t t) { return t >= 1 && t <= 8; }

}  // namespace

const char* msg_name(MsgType t) {
  switch (t) {
    case MsgType::Hello: return "Hello";
    case MsgType::KeyMaterial: return "KeyMaterial";
    case MsgType::ModelDeploy: return "ModelDeploy";
    case MsgType::EncInput: return "EncInput";
    case MsgType::EncIntermediate: return "EncIntermediate";
    case MsgType::EncActivations: return "EncActivations";
    case MsgType::EncPrediction: return "EncPrediction";
    case MsgType::Error: return "Error";
  }
  return "?";
}

Bytes encode_frame(const Frame& f) {
  ByteWriter w(kFrameHeaderBytes + f.payload.size());
  w.put_magic({kMagic, 4});
  w.put_u16(f.version);
  w.put_u8(static_cast<std::uint8_t>(f.type));
  w.put_u64(f.payload.size());
  w.put_bytes(f.payload);
  return w.take();
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic({kMagic, 4});
  Frame f;
  f.version = r.get_u16();
  const auto t = r.get_u8();
  if (!valid_type(t)) throw FormatError("unknown message type " + std::to_string(t));
  f.type = static_cast<MsgType>(t);
  const auto len = r.get_u64();
  if (len != r.remaining()) {
    throw FormatError("frame length " + std::to_string(len) + " disagrees with " + std::to_string(r.remaining()) +
                      " payload bytes");
  }
  auto p = r.take(len);
  f.payload.assign(p.begin(), p.end());
  return f;
}

// ---- sockets ----

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    tap_ = std::move(o.tap_);
    o.fd_ = -1;
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket Socket::connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw IoError("cannot resolve " + host + ": " + gai_strerror(rc));
  }
  std::string last = "no addresses";
  for (addrinfo* a = res; a; a = a->ai_next) {
    int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) {
      last = errno_text();
      continue;
    }
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Socket(fd);
    }
    last = errno_text();
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw IoError("cannot connect to " + host + ":" + service + ": " + last);
}

void Socket::write_all(const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw IoError("send failed: " + errno_text());
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

void Socket::read_all(std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd_, p, n, 0);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw IoError("recv failed: " + errno_text());
    }
    if (k == 0) throw IoError("connection closed by peer");
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

void Socket::send_frame(const Frame& f) {
  if (fd_ < 0) throw IoError("socket is closed");
  const Bytes b = encode_frame(f);
  if (tap_) tap_(true, b);
  write_all(b.data(), b.size());
}

Frame Socket::recv_frame() {
  if (fd_ < 0) throw IoError("socket is closed");
  Bytes b(kFrameHeaderBytes);
  read_all(b.data(), b.size());
  if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("bad frame magic");
  std::uint64_t len;
  std::memcpy(&len, b.data() + 7, sizeof len);
  if (len > kMaxPayloadBytes) throw FormatError("frame payload of " + std::to_string(len) + " bytes is too large");
  b.resize(kFrameHeaderBytes + len);
  read_all(b.data() + kFrameHeaderBytes, len);
  if (tap_) tap_(false, b);
  return decode_frame(b);
}

Listener::Listener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  const std::string h = host.empty() || host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &sa.sin_addr) != 1) {
    ::close(fd_);
    throw IoError("not an IPv4 address: " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || ::listen(fd_, 64) != 0) {
    const std::string msg = errno_text();
    ::close(fd_);
    throw IoError("cannot listen on " + h + ":" + std::to_string(port) + ": " + msg);
  }
  socklen_t len = sizeof sa;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

Socket Listener::accept() {
  while (true) {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c >= 0) {
      int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Socket(c);
    }
    if (errno == EINTR) continue;
    return Socket();
  }
}

void Listener::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

std::pair<std::string, std::uint16_t> parse_address(const std::string& addr) {
  std::string host = "127.0.0.1", port = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = addr.substr(0, colon);
    port = addr.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::invalid_argument(port);
    return {host, static_cast<std::uint16_t>(p)};
  } catch (const std::logic_error&) {
    throw ParameterError("bad address '" + addr + "', expected host:port");
  }
}

// ---- packed tensors ----

void serialize_packed(const enc::PackedCiphertextTensor& x, ByteWriter& w) {
  w.put_u8(static_cast<std::uint8_t>(x.layout));
  w.put_u32(static_cast<std::uint32_t>(x.logical_shape.size()));
  for (auto d : x.logical_shape) w.put_u32(static_cast<std::uint32_t>(d));
  w.put_u32(static_cast<std::uint32_t>(x.block));
  w.put_u32(static_cast<std::uint32_t>(x.period));
  w.put_u32(static_cast<std::uint32_t>(x.slot_index.size()));
  for (auto s : x.slot_index) w.put_u32(static_cast<std::uint32_t>(s));
  w.put_u32(static_cast<std::uint32_t>(x.cts.size()));
  for (const auto& ct : x.cts) he::serialize_ct(ct, w);
}

enc::PackedCiphertextTensor deserialize_packed(ByteReader& r, const he::CkksContext& ctx) {
  enc::PackedCiphertextTensor x;
  const auto layout = r.get_u8();
  if (layout > static_cast<std::uint8_t>(enc::Layout::ChannelPerCiphertext)) throw FormatError("unknown layout");
  x.layout = static_cast<enc::Layout>(layout);
  const auto nd = r.get_u32();
  if (nd > 8) throw FormatError("tensor rank too large");
  for (std::uint32_t i = 0; i < nd; ++i) x.logical_shape.push_back(r.get_u32());
  x.block = r.get_u32();
  x.period = r.get_u32();
  const std::size_t slots = ctx.slot_count();
  if (x.block > slots || x.period > slots) throw FormatError("layout parameter exceeds slot count");
  const auto ni = r.get_u32();
  if (ni > slots) throw FormatError("slot index list too long");
  for (std::uint32_t i = 0; i < ni; ++i) {
    const auto s = r.get_u32();
    if (s >= slots) throw FormatError("slot index out of range");
    x.slot_index.push_back(s);
  }
  const auto nc = r.get_u32();
  if (nc == 0 || nc > 4096) throw FormatError("bad ciphertext count");
  for (std::uint32_t i = 0; i < nc; ++i) x.cts.push_back(he::deserialize_ct(r, ctx));
  for (const auto& ct : x.cts) {
    if (ct.level != x.cts.front().level) throw FormatError("ciphertexts of one tensor sit at different levels");
  }
  if (x.logical_shape.empty() || nn::numel(x.logical_shape) > slots * nc) {
    throw FormatError("logical shape does not fit the ciphertexts");
  }
  return x;
}

}  // namespace splitfhe::proto
