#include "splitfhe/proto/session.hpp"

#include "splitfhe/error.hpp"

namespace splitfhe::proto {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::AwaitKeys: return "AwaitKeys";
    case Phase::AwaitDeployAck: return "AwaitDeployAck";
    case Phase::Idle: return "Idle";
    case Phase::AwaitIntermediate: return "AwaitIntermediate";
    case Phase::AwaitActivations: return "AwaitActivations";
    case Phase::AwaitPrediction: return "AwaitPrediction";
    case Phase::Done: return "Done";
    case Phase::Failed: return "Failed";
  }
  return "?";
}

namespace {

// Which side sends each message; Hello goes both ways.
Role sender(MsgType t) {
  switch (t) {
    case MsgType::KeyMaterial:
    case MsgType::EncInput:
    case MsgType::EncActivations:
      return Role::Client;
    default:
      return Role::Server;
  }
}

}  // namespace

void SessionState::step(MsgType t, bool outbound) {
  if (t == MsgType::Error) {
    phase_ = Phase::Failed;
    return;
  }
  const Phase before = phase_;
  auto bad = [&] {
    phase_ = Phase::Failed;
    throw ProtocolError(std::string("unexpected ") + msg_name(t) + (outbound ? " sent" : " received") +
                        " in phase " + phase_name(before));
  };

  if (t == MsgType::Hello) {
    if (phase_ != Phase::AwaitKeys) bad();
    // the client speaks first, the server answers
    const bool client_first = role_ == Role::Client ? outbound : !outbound;
    if (client_first) {
      if (role_ == Role::Client ? hello_sent_ : hello_received_) bad();
      (role_ == Role::Client ? hello_sent_ : hello_received_) = true;
    } else {
      const bool first_done = role_ == Role::Client ? hello_sent_ : hello_received_;
      bool& second = role_ == Role::Client ? hello_received_ : hello_sent_;
      if (!first_done || second) bad();
      second = true;
    }
    return;
  }

  if (outbound != (sender(t) == role_)) bad();
  switch (t) {
    case MsgType::KeyMaterial:
      if (phase_ != Phase::AwaitKeys || !hello_done()) bad();
      phase_ = Phase::AwaitDeployAck;
      break;
    case MsgType::ModelDeploy:
      if (phase_ != Phase::AwaitDeployAck) bad();
      phase_ = Phase::Idle;
      break;
    case MsgType::EncInput:
      if (phase_ != Phase::Idle) bad();
      phase_ = Phase::AwaitIntermediate;
      break;
    case MsgType::EncIntermediate:
      if (phase_ != Phase::AwaitIntermediate) bad();
      phase_ = Phase::AwaitActivations;
      break;
    case MsgType::EncActivations:
      if (phase_ != Phase::AwaitActivations) bad();
      phase_ = Phase::AwaitPrediction;
      break;
    case MsgType::EncPrediction:
      if (phase_ != Phase::AwaitPrediction) bad();
      phase_ = Phase::Idle;
      break;
    default:
      bad();
  }
}

}  // namespace splitfhe::proto
