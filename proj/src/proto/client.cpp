#include <chrono>
#include <cmath>

#include "splitfhe/error.hpp"
#include "splitfhe/proto/protocol.hpp"

namespace splitfhe::proto {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Error payloads are "kind: message"; depth errors keep their type so the
// caller can tell a budget problem from a protocol failure.
[[noreturn]] void rethrow_remote(const Frame& f, const char* stage) {
  const std::string text(f.payload.begin(), f.payload.end());
  const std::string msg = std::string("server error at stage ") + stage + ": " + text;
  if (text.rfind("depth:", 0) == 0) throw DepthError(msg);
  throw ProtocolError(msg);
}

void check_decrypted(const nn::Tensor& t, const char* stage) {
  for (double v : t.data) {
    if (!std::isfinite(v) || std::abs(v) > 1e9) {
      throw ProtocolError(std::string("stage ") + stage + ": decryption gave out-of-range values (scale anomaly)");
    }
  }
}

}  // namespace

ClientSession::ClientSession(Socket sock, he::ContextPtr ctx, const he::KeyMaterial& keys, std::uint64_t seed)
    : sock_(std::move(sock)), ctx_(std::move(ctx)), keys_(&keys), rng_(seed) {
  state_.params_digest = ctx_->digest();
}

void ClientSession::send(MsgType t, Bytes payload) {
  state_.on_send(t);
  Frame f;
  f.type = t;
  f.payload = std::move(payload);
  try {
    sock_.send_frame(f);
  } catch (...) {
    state_.fail();
    throw;
  }
}

void ClientSession::send_raw(MsgType t, Bytes payload) {
  Frame f;
  f.type = t;
  f.payload = std::move(payload);
  sock_.send_frame(f);
}

Frame ClientSession::recv_raw() { return sock_.recv_frame(); }

Frame ClientSession::expect(MsgType t, const char* stage) {
  Frame f;
  try {
    f = sock_.recv_frame();
  } catch (const Error& e) {
    state_.fail();
    throw ProtocolError(std::string("stage ") + stage + ": " + e.what());
  }
  if (f.type == MsgType::Error) {
    state_.fail();
    rethrow_remote(f, stage);
  }
  if (f.version != kProtocolVersion) {
    state_.fail();
    throw ProtocolError(std::string("stage ") + stage + ": peer speaks protocol version " + std::to_string(f.version));
  }
  if (f.type != t) {
    state_.fail();
    throw ProtocolError(std::string("stage ") + stage + ": expected " + msg_name(t) + ", got " + msg_name(f.type));
  }
  state_.on_recv(t);
  return f;
}

void ClientSession::start(std::uint16_t version) {
  const auto& d = ctx_->digest();
  Frame hello;
  hello.version = version;
  hello.type = MsgType::Hello;
  hello.payload.assign(d.begin(), d.end());
  state_.on_send(MsgType::Hello);
  sock_.send_frame(hello);
  try {
    const Frame reply = expect(MsgType::Hello, "handshake");
    if (!std::equal(reply.payload.begin(), reply.payload.end(), d.begin(), d.end())) {
      state_.fail();
      throw ProtocolError("stage handshake: server uses different encryption parameters");
    }
  } catch (const ProtocolError& e) {
    throw ProtocolError(std::string("handshake failed: ") + e.what());
  }

  Bytes keys = he::serialize_public_keys(*keys_->public_keys);
  key_bytes_ = keys.size();
  send(MsgType::KeyMaterial, std::move(keys));
  const Frame dep = expect(MsgType::ModelDeploy, "deploy");
  deploy_bytes_ = dep.payload.size();
  deployment_ = decode_deployment(dep.payload);
}

InferResult ClientSession::infer(const nn::Tensor& image) {
  if (state_.phase() != Phase::Idle) {
    throw ProtocolError(std::string("cannot run inference in phase ") + phase_name(state_.phase()));
  }
  const auto& ctx = *ctx_;
  const auto& pk = keys_->public_keys->public_key;
  InferResult res;
  auto& m = res.metrics;
  m.offline_key_bytes = key_bytes_;
  m.offline_deploy_bytes = deploy_bytes_;

  if (image.shape != deployment_.model1_input) {
    throw ShapeError("input shape " + nn::shape_str(image.shape) + " does not match Model 1 input " +
                     nn::shape_str(deployment_.model1_input));
  }

  // T1: encode and encrypt the input.
  auto t0 = Clock::now();
  const auto& dep = deployment_;
  const auto x = dep.input.im2col ? enc::pack_input(image, dep.input.conv, ctx, pk, rng_, dep.model1_level)
                                  : enc::pack_flat(image, dep.input.period, ctx, pk, rng_, dep.model1_level);
  ByteWriter w1;
  serialize_packed(x, w1);
  Bytes p1 = w1.take();
  m.c1 = p1.size();
  m.t1 = seconds_since(t0);

  // T2: server evaluates Model 1.
  t0 = Clock::now();
  send(MsgType::EncInput, std::move(p1));
  const Frame f2 = expect(MsgType::EncIntermediate, "EncIntermediate");
  m.t2 = seconds_since(t0);
  m.c2 = f2.payload.size();

  // T3: decrypt, run Model 2 in plaintext, re-encrypt.
  t0 = Clock::now();
  nn::Tensor h;
  try {
    ByteReader r2(f2.payload);
    const auto y1 = deserialize_packed(r2, ctx);
    r2.expect_end();
    h = enc::decrypt_tensor(y1, ctx, keys_->secret_key);
    check_decrypted(h, "EncIntermediate");
    res.intermediate = h;
    h = nn::forward(deployment_.model2, h);
  } catch (...) {
    state_.fail();
    throw;
  }
  const auto x3 = enc::pack_flat(h, deployment_.model3_period, ctx, pk, rng_, deployment_.model3_level);
  ByteWriter w3;
  serialize_packed(x3, w3);
  Bytes p3 = w3.take();
  m.c3 = p3.size();
  m.t3 = seconds_since(t0);

  // T4: server evaluates Model 3.
  t0 = Clock::now();
  send(MsgType::EncActivations, std::move(p3));
  const Frame f4 = expect(MsgType::EncPrediction, "EncPrediction");
  m.t4 = seconds_since(t0);
  m.c4 = f4.payload.size();

  try {
    ByteReader r4(f4.payload);
    const auto y3 = deserialize_packed(r4, ctx);
    r4.expect_end();
    res.logits = enc::decrypt_tensor(y3, ctx, keys_->secret_key);
    check_decrypted(res.logits, "EncPrediction");
  } catch (...) {
    state_.fail();
    throw;
  }
  return res;
}

void ClientSession::close() {
  state_.finish();
  sock_.close();
}

ClientSession client_start_session(const std::string& addr, he::ContextPtr ctx, const he::KeyMaterial& keys,
                                   std::uint64_t seed, FrameTap tap) {
  const auto [host, port] = parse_address(addr);
  ClientSession s(Socket::connect(host, port), std::move(ctx), keys, seed);
  if (tap) s.set_tap(std::move(tap));
  s.start();
  return s;
}

}  // namespace splitfhe::proto
