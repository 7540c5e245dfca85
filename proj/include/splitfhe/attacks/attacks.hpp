#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitfhe/nn/dataset.hpp"
#include "splitfhe/nn/model.hpp"
#include "splitfhe/nn/train.hpp"
#include "splitfhe/proto/protocol.hpp"

namespace splitfhe::attacks {

// ---- model extraction ----

// What a client of the protocol sees for one query.
struct Observation {
  nn::Tensor model1_out;  // decrypted output of Model 1
  nn::Tensor logits;      // decrypted final prediction
};

class VictimAccess {
 public:
  virtual ~VictimAccess() = default;
  virtual Observation query(const nn::Tensor& x) = 0;
  // Model 2 in plaintext, as deployed to every client.
  virtual const nn::Model& model2() const = 0;
  virtual const nn::Shape& input_shape() const = 0;
  // Number of hidden layers in Model 3.
  virtual std::size_t enc_tail_layers() const = 0;
  // Layer layout of Model 3 (weights are ignored) when the attacker knows it.
  virtual std::optional<std::vector<nn::LayerSpec>> tail_architecture() const { return std::nullopt; }
  // The three plaintext parts when the attacker is handed everything; empty otherwise.
  virtual std::optional<std::array<nn::Model, 3>> reveal() const { return std::nullopt; }
};

// Runs the split model in plaintext with exactly the client's view. Used to
// simulate long attack campaigns without paying for encryption.
class PlaintextVictim : public VictimAccess {
 public:
  PlaintextVictim(std::array<nn::Model, 3> parts, bool full_access = false);
  // Splits `m` so that Model 1 has `n` layers and Model 3 the last `tail`.
  static PlaintextVictim from_model(const nn::Model& m, std::size_t n, std::size_t tail, bool full_access = false);

  Observation query(const nn::Tensor& x) override;
  const nn::Model& model2() const override { return parts_[1]; }
  const nn::Shape& input_shape() const override { return parts_[0].input_shape; }
  std::size_t enc_tail_layers() const override { return parts_[2].layers.size(); }
  std::optional<std::vector<nn::LayerSpec>> tail_architecture() const override { return parts_[2].layers; }
  std::optional<std::array<nn::Model, 3>> reveal() const override;

 private:
  std::array<nn::Model, 3> parts_;
  bool full_access_;
};

// Queries a live server through an established client session.
class ProtocolVictim : public VictimAccess {
 public:
  explicit ProtocolVictim(proto::ClientSession& session);

  Observation query(const nn::Tensor& x) override;
  const nn::Model& model2() const override { return session_.deployment().model2; }
  const nn::Shape& input_shape() const override { return session_.deployment().model1_input; }
  std::size_t enc_tail_layers() const override { return tail_; }
  std::optional<std::vector<nn::LayerSpec>> tail_architecture() const override { return tail_arch_; }
  void set_enc_tail_layers(std::size_t t) { tail_ = t; }
  void set_tail_architecture(std::vector<nn::LayerSpec> a) { tail_arch_ = std::move(a); }

 private:
  proto::ClientSession& session_;
  std::size_t tail_ = 0;
  std::optional<std::vector<nn::LayerSpec>> tail_arch_;
};

struct MeaConfig {
  std::size_t attacker_samples = 500;
  std::size_t epochs = 40;
  double lr = 0.02;
  std::size_t batch = 16;
  std::size_t width = 8;  // channels of the five-convolution substitute for Model 1
  // Model 1 regression runs at least this many SGD steps, so small budgets are not under-trained.
  std::size_t min_steps = 1000;
  std::uint64_t seed = 0;
};

struct MeaReport {
  double fidelity = 0.0;  // label agreement with the victim on held-out data
  double model1_mse = 0.0;
  std::size_t samples = 0;
  std::size_t enc_tail_layers = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
};

// Five 3x3 convolutions (padding 1) with ReLU, then a dense layer producing
// `out_features` values.
nn::Model five_conv_substitute(const nn::Shape& in, std::size_t out_features, std::size_t width, std::uint64_t seed);

// M1' together with the shape Model 2 expects from it.
struct Model1Substitute {
  nn::Model net;  // ends in a dense layer; output is reshaped to out_shape
  nn::Shape out_shape;
  std::vector<nn::Tensor> inputs;    // the attacker's queries
  std::vector<nn::Tensor> observed;  // Model 1 outputs seen for them

  nn::Tensor apply(const nn::Tensor& x) const;
};

// Queries the first cfg.attacker_samples samples and fits M1' to the observed
// Model 1 outputs with MSE.
Model1Substitute train_model1_substitute(VictimAccess& victim, const nn::Dataset& attacker_data,
                                         const MeaConfig& cfg);

// Trains M1' (unless given) and M3' on Model 2 outputs with the true labels
// of the attacker's samples (cross-entropy). M3' uses the victim's tail layout
// with fresh weights when known, else a dense stack of the same length.
// Fidelity is measured on `held_out`.
MeaReport mea_run(VictimAccess& victim, const nn::Dataset& attacker_data, const nn::Dataset& held_out,
                  const MeaConfig& cfg, const Model1Substitute* m1 = nullptr);

// Degenerate case where the attacker holds all three parts.
MeaReport mea_full_access(VictimAccess& victim, const nn::Dataset& held_out);

// Label agreement between two predictors on `data`.
double fidelity(std::span<const int> a, std::span<const int> b);

// Recovers an affine Model 1 (single Dense layer) from the zero input and the
// one-hot basis.
nn::Dense recover_linear(VictimAccess& victim);

// ---- membership inference ----

enum class MiaKind { ShadowTrained, Threshold, TrainedKNN, TrainedLogistic, TrainedMLP };
const char* mia_kind_name(MiaKind k);

struct MiaRow {
  std::string kind;
  std::string cls;  // class index or "all"
  double auc = 0.5;
  double advantage = 0.0;
  double precision = 0.5;
};

struct MiaReport {
  MiaKind kind = MiaKind::Threshold;
  double auc = 0.5;
  double advantage = 0.0;
  double precision = 0.5;
  std::vector<MiaRow> per_class;  // one row per class, then the "all" row
};

// Area under the ROC curve when larger scores mean "member" (ties count half).
double roc_auc(std::span<const double> member_scores, std::span<const double> non_member_scores);
// max over thresholds of TPR - FPR, never below 0.
double max_advantage(std::span<const double> member_scores, std::span<const double> non_member_scores);
// Precision of "member" predictions at score > threshold; the base rate when nothing is predicted.
double precision_at(std::span<const double> member_scores, std::span<const double> non_member_scores,
                    double threshold);

// Per-example cross-entropy of the victim's prediction.
std::vector<double> example_losses(const nn::Model& victim, const nn::Dataset& data);

// Loss thresholding: score = -loss.
MiaReport mia_threshold(const nn::Model& victim, const nn::Dataset& members, const nn::Dataset& non_members);
// Same, from precomputed losses.
MiaReport mia_threshold_losses(std::span<const double> member_losses, std::span<const double> non_member_losses);

struct MiaConfig {
  std::size_t shadow_count = 3;
  double attacker_data_fraction = 0.5;  // share of the attacker pool used to train shadows
  std::string arch = "fixture7";       // shadows use the victim's architecture
  nn::TrainConfig train;               // and its training recipe
  std::uint64_t seed = 0;
};

// Shadow models on disjoint samples of `pool`; a per-class logistic
// membership classifier on their confidence vectors is then applied to the
// victim's outputs on `members` and `non_members`.
MiaReport mia_shadow(const nn::Model& victim, const nn::Dataset& pool, const nn::Dataset& members,
                     const nn::Dataset& non_members, const MiaConfig& cfg);

// Binary classifier on (confidence vector, loss) features. Half of each set
// trains the attack, the other half measures it.
MiaReport mia_trained(const nn::Model& victim, const nn::Dataset& members, const nn::Dataset& non_members,
                      MiaKind kind, std::uint64_t seed);

// ---- reports ----

inline constexpr const char* kMeaCsvHeader = "samples,enc_tail_layers,seed,fidelity";
inline constexpr const char* kMiaCsvHeader = "kind,class,auc,advantage,precision";

std::string mea_csv(std::span<const MeaReport> rows);
std::string mea_json(std::span<const MeaReport> rows);
std::vector<MeaReport> parse_mea_csv(const std::string& text);
std::string mia_csv(std::span<const MiaRow> rows);
std::string mia_json(std::span<const MiaRow> rows);
std::vector<MiaRow> parse_mia_csv(const std::string& text);

}  // namespace splitfhe::attacks
