#include <sys/socket.h>

#include <algorithm>

#include "splitfhe/error.hpp"
#include "splitfhe/proto/protocol.hpp"

namespace splitfhe::proto {

Server::Server(ServerBundle bundle, he::ContextPtr ctx, Bytes deploy_blob)
    : bundle_(std::move(bundle)), ctx_(std::move(ctx)), deploy_(std::move(deploy_blob)) {}

Server::~Server() { stop(); }

std::uint16_t Server::listen(const std::string& addr) {
  const auto [host, port] = parse_address(addr);
  listener_ = std::make_unique<Listener>(host, port);
  return listener_->port();
}

void Server::serve() {
  if (!listener_) throw ParameterError("server is not listening");
  while (!stopping_) {
    Socket s = listener_->accept();
    if (!s.valid()) break;
    std::lock_guard lock(mu_);
    if (stopping_) break;
    live_fds_.push_back(s.fd());
    workers_.emplace_back([this, sock = std::move(s)]() mutable { handle(std::move(sock)); });
  }
}

void Server::start() {
  accept_thread_ = std::thread([this] { serve(); });
}

void Server::stop() {
  stopping_ = true;
  if (listener_) listener_->shutdown();
  if (accept_thread_.joinable()) accept_thread_.join();
  std::list<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
}

ServerStats Server::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void Server::handle(Socket sock) {
  const int fd = sock.fd();
  if (tap_) sock.set_tap(tap_);
  SessionState st(Role::Server);
  st.params_digest = ctx_->digest();
  std::shared_ptr<const he::EvaluationKeys> keys;
  std::unique_ptr<enc::EncEnv> env;
  {
    std::lock_guard lock(mu_);
    ++stats_.sessions;
  }

  auto reply = [&](MsgType t, Bytes payload) {
    st.on_send(t);
    Frame f;
    f.type = t;
    f.payload = std::move(payload);
    sock.send_frame(f);
  };
  auto reject = [&](const std::string& kind, const std::string& msg) {
    st.fail();
    const std::string text = kind + ": " + msg;
    Frame f;
    f.type = MsgType::Error;
    f.payload.assign(text.begin(), text.end());
    try {
      sock.send_frame(f);
    } catch (const Error&) {
    }
  };
  auto run_segment = [&](const Frame& f, std::span<const enc::EncLayerSpec> layers, const nn::Shape& shape,
                         bool im2col, std::size_t period) {
    ByteReader r(f.payload);
    auto x = deserialize_packed(r, *ctx_);
    r.expect_end();
    const auto want = im2col ? enc::Layout::Im2ColMatrix : enc::Layout::FlatVector;
    if (x.layout != want || x.logical_shape != shape || (!im2col && x.period != period) || !x.slot_index.empty()) {
      throw ProtocolError(std::string(msg_name(f.type)) + " payload does not match the deployed layout");
    }
    if (im2col && (x.cts.size() != shape.at(0) || x.block != enc::im2col_block(shape, bundle_.input.conv))) {
      throw ProtocolError("im2col input does not match the deployed convolution");
    }
    const auto y = enc::eval_encrypted_segment(x, layers, *env);
    ByteWriter w;
    serialize_packed(y, w);
    return w.take();
  };

  try {
    while (true) {
      Frame f;
      try {
        f = sock.recv_frame();
      } catch (const IoError&) {
        break;  // peer went away
      }
      if (f.version != kProtocolVersion) {
        reject("protocol", "version mismatch: server speaks " + std::to_string(kProtocolVersion) + ", client sent " +
                               std::to_string(f.version));
        break;
      }
      if (f.type == MsgType::Error) {
        st.fail();
        break;
      }
      st.on_recv(f.type);
      switch (f.type) {
        case MsgType::Hello: {
          const auto& d = ctx_->digest();
          if (!std::equal(f.payload.begin(), f.payload.end(), d.begin(), d.end())) {
            throw ParameterError("client encryption parameters differ from the server's (" + he::to_hex(d) + ")");
          }
          reply(MsgType::Hello, Bytes(d.begin(), d.end()));
          break;
        }
        case MsgType::KeyMaterial:
          keys = std::make_shared<const he::EvaluationKeys>(he::deserialize_public_keys(f.payload, *ctx_));
          env = std::make_unique<enc::EncEnv>(ctx_, keys);
          reply(MsgType::ModelDeploy, deploy_);
          break;
        case MsgType::EncInput:
          reply(MsgType::EncIntermediate, run_segment(f, bundle_.enc1, bundle_.model1.input_shape,
                                                      bundle_.input.im2col, bundle_.input.period));
          break;
        case MsgType::EncActivations: {
          auto out = run_segment(f, bundle_.enc3, bundle_.model3.input_shape, false, bundle_.model3_period);
          {
            // counted before the reply so a client that has its prediction sees it in stats()
            std::lock_guard lock(mu_);
            ++stats_.inferences;
          }
          reply(MsgType::EncPrediction, std::move(out));
          break;
        }
        default:
          throw ProtocolError(std::string("unexpected ") + msg_name(f.type));
      }
    }
  } catch (const Error& e) {
    reject(e.kind(), e.what());
  } catch (const std::exception& e) {
    reject("internal", e.what());
  }
  if (st.phase() != Phase::Failed) st.finish();

  std::lock_guard lock(mu_);
  if (st.phase() == Phase::Failed) ++stats_.failed;
  live_fds_.erase(std::remove(live_fds_.begin(), live_fds_.end(), fd), live_fds_.end());
}

}  // namespace splitfhe::proto
