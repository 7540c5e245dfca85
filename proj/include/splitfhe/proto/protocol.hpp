#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "splitfhe/enc/tensor.hpp"
#include "splitfhe/he/ckks.hpp"
#include "splitfhe/nn/model.hpp"
#include "splitfhe/proto/session.hpp"
#include "splitfhe/proto/wire.hpp"

namespace splitfhe::proto {

// How the client packs the input of Model 1. Carries geometry only; the
// convolution weights stay on the server.
struct InputPlan {
  bool im2col = false;
  nn::Conv2d conv;         // im2col: channels, kernel, stride, padding (no weights)
  std::size_t period = 0;  // flat
};

// The client's half of the deployment, sent in the ModelDeploy message.
struct Deployment {
  nn::Model model2;
  nn::Shape model1_input;
  InputPlan input;
  std::size_t model3_period = 0;
  // Levels the client encrypts each segment's input at: the segment depths.
  std::size_t model1_level = 0;
  std::size_t model3_level = 0;
};

Bytes encode_deployment(const Deployment& d);
Deployment decode_deployment(std::span<const std::uint8_t> bytes);

struct ServerBundle {
  nn::Model model1;  // after activation substitution
  nn::Model model3;
  std::vector<enc::EncLayerSpec> enc1;
  std::vector<enc::EncLayerSpec> enc3;
  InputPlan input;
  std::size_t model3_period = 0;
};

struct PreparedSplit {
  ServerBundle bundle;
  Deployment deployment;
  Bytes deploy_blob;
  // Model 1 and Model 3 with substituted activations around the original
  // Model 2: the plaintext function the protocol computes.
  nn::Model reference;
};

// Splits, substitutes activations in Model 1 and Model 3 (ranges measured on
// `calibration`; square when empty) and checks both encrypted segments
// against the depth budget of `params`. A Model 3 that is too deep raises
// DepthError naming the longest tail that would fit.
PreparedSplit server_offline_prepare(const nn::Model& m, const nn::SplitSpec& spec, const he::CkksParams& params,
                                     std::span<const nn::Tensor> calibration = {});

// Longest encrypted tail (in layers of the folded model) whose substituted
// form fits in the depth budget, keeping at least one layer for Model 1 and
// one for Model 2.
std::size_t max_feasible_tail(const nn::Model& m, const he::CkksParams& params,
                              std::span<const nn::Tensor> calibration = {});

struct SessionMetrics {
  double t1 = 0, t2 = 0, t3 = 0, t4 = 0;          // seconds
  std::uint64_t c1 = 0, c2 = 0, c3 = 0, c4 = 0;  // payload bytes
  std::uint64_t offline_deploy_bytes = 0;
  std::uint64_t offline_key_bytes = 0;

  double total() const { return t1 + t2 + t3 + t4; }
};

struct InferResult {
  nn::Tensor logits;
  nn::Tensor intermediate;  // decrypted Model 1 output
  SessionMetrics metrics;
};

class ClientSession {
 public:
  ClientSession(Socket sock, he::ContextPtr ctx, const he::KeyMaterial& keys, std::uint64_t seed);

  // Hello, KeyMaterial, then waits for ModelDeploy.
  void start(std::uint16_t version = kProtocolVersion);
  // One pass of the online phase. The session returns to Idle and can be reused.
  InferResult infer(const nn::Tensor& image);
  void close();

  // Sends an arbitrary frame; used to exercise the server's order checks.
  void send_raw(MsgType t, Bytes payload);
  Frame recv_raw();

  Phase phase() const { return state_.phase(); }
  const Deployment& deployment() const { return deployment_; }
  std::uint64_t offline_key_bytes() const { return key_bytes_; }
  std::uint64_t offline_deploy_bytes() const { return deploy_bytes_; }
  void set_tap(FrameTap tap) { sock_.set_tap(std::move(tap)); }

 private:
  Frame expect(MsgType t, const char* stage);
  void send(MsgType t, Bytes payload);

  Socket sock_;
  he::ContextPtr ctx_;
  const he::KeyMaterial* keys_;
  Prng rng_;
  SessionState state_{Role::Client};
  Deployment deployment_;
  std::uint64_t key_bytes_ = 0, deploy_bytes_ = 0;
};

ClientSession client_start_session(const std::string& addr, he::ContextPtr ctx, const he::KeyMaterial& keys,
                                   std::uint64_t seed, FrameTap tap = {});

// Counters kept by a running server.
struct ServerStats {
  std::uint64_t sessions = 0;
  std::uint64_t failed = 0;
  std::uint64_t inferences = 0;
};

class Server {
 public:
  Server(ServerBundle bundle, he::ContextPtr ctx, Bytes deploy_blob);
  ~Server();

  // Binds and returns the port actually used.
  std::uint16_t listen(const std::string& addr);
  // Accept loop; returns after stop().
  void serve();
  // serve() on a background thread.
  void start();
  void stop();

  void set_tap(FrameTap tap) { tap_ = std::move(tap); }
  ServerStats stats() const;

  // Runs one session to completion on an already connected socket.
  void handle(Socket sock);

 private:
  ServerBundle bundle_;
  he::ContextPtr ctx_;
  Bytes deploy_;
  FrameTap tap_;
  std::unique_ptr<Listener> listener_;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};
  mutable std::mutex mu_;
  std::list<std::thread> workers_;
  std::vector<int> live_fds_;
  ServerStats stats_;
};

// ---- metrics ----

struct MetricsRow {
  std::size_t enc_tail_layers = 0;
  SessionMetrics metrics;
};

inline constexpr const char* kMetricsCsvHeader =
    "enc_tail_layers,t1_s,c1_bytes,t2_s,c2_bytes,t3_s,c3_bytes,t4_s,c4_bytes,total_s";

std::string metrics_csv(std::span<const MetricsRow> rows);
std::string metrics_json(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
// Element-wise mean of several runs (byte counts are taken from the first run).
SessionMetrics mean_metrics(std::span<const SessionMetrics> runs);

// Parameters selected by SPLITFHE_PROFILE (desk or paper128), else `fallback`.
he::CkksParams params_from_env(const std::string& fallback = "desk");

}  // namespace splitfhe::proto
