#pragma once

#include <string>

#include "splitfhe/he/params.hpp"
#include "splitfhe/proto/wire.hpp"

namespace splitfhe::proto {

enum class Phase { AwaitKeys, AwaitDeployAck, Idle, AwaitIntermediate, AwaitActivations, AwaitPrediction, Done, Failed };
enum class Role { Client, Server };

const char* phase_name(Phase p);

// Per-connection protocol order.
//
//   client: AwaitKeys --send Hello, KeyMaterial--> AwaitDeployAck
//           --recv ModelDeploy--> Idle --send EncInput--> AwaitIntermediate
//           --recv EncIntermediate--> AwaitActivations --send EncActivations-->
//           AwaitPrediction --recv EncPrediction--> Idle
//   server: AwaitKeys --recv Hello (reply Hello), KeyMaterial--> AwaitDeployAck
//           --send ModelDeploy--> Idle --recv EncInput--> AwaitIntermediate
//           --send EncIntermediate--> AwaitActivations --recv EncActivations-->
//           AwaitPrediction --send EncPrediction--> Idle
//
// Any other message moves the session to Failed and raises ProtocolError.
class SessionState {
 public:
  explicit SessionState(Role role) : role_(role) {}

  void on_send(MsgType t) { step(t, true); }
  void on_recv(MsgType t) { step(t, false); }
  void finish() { phase_ = phase_ == Phase::Failed ? Phase::Failed : Phase::Done; }
  void fail() { phase_ = Phase::Failed; }

  Phase phase() const { return phase_; }
  Role role() const { return role_; }
  bool hello_done() const { return hello_sent_ && hello_received_; }

  he::ParamsDigest params_digest{};

 private:
  void step(MsgType t, bool outbound);

  Role role_;
  Phase phase_ = Phase::AwaitKeys;
  bool hello_sent_ = false;
  bool hello_received_ = false;
};

}  // namespace splitfhe::proto
