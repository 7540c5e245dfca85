#include <algorithm>
#include <cmath>

#include "splitfhe/attacks/attacks.hpp"
#include "splitfhe/error.hpp"

namespace splitfhe::attacks {

PlaintextVictim::PlaintextVictim(std::array<nn::Model, 3> parts, bool full_access)
    : parts_(std::move(parts)), full_access_(full_access) {}

PlaintextVictim PlaintextVictim::from_model(const nn::Model& m, std::size_t n, std::size_t tail, bool full_access) {
  if (tail + n >= m.layers.size()) throw SplitError("Model 2 empty: n + tail must be below the layer count");
  return PlaintextVictim(nn::split(m, {n, m.layers.size() - n - tail}), full_access);
}

Observation PlaintextVictim::query(const nn::Tensor& x) {
  Observation o;
  o.model1_out = nn::forward(parts_[0], x);
  o.logits = nn::forward(parts_[2], nn::forward(parts_[1], o.model1_out));
  return o;
}

std::optional<std::array<nn::Model, 3>> PlaintextVictim::reveal() const {
  if (!full_access_) return std::nullopt;
  return parts_;
}

ProtocolVictim::ProtocolVictim(proto::ClientSession& session) : session_(session) {}

Observation ProtocolVictim::query(const nn::Tensor& x) {
  auto r = session_.infer(x);
  return {std::move(r.intermediate), std::move(r.logits)};
}

nn::Model five_conv_substitute(const nn::Shape& in, std::size_t out_features, std::size_t width,
                               std::uint64_t seed) {
  if (in.size() != 3) throw ShapeError("substitute needs a [C,H,W] input, got " + nn::shape_str(in));
  std::vector<nn::LayerSpec> a;
  std::size_t c = in[0];
  for (int i = 0; i < 5; ++i) {
    nn::Conv2d conv;
    conv.in_channels = c;
    conv.out_channels = width;
    conv.kernel = 3;
    conv.padding = 1;
    a.emplace_back(conv);
    a.emplace_back(nn::ReLU{});
    c = width;
  }
  a.emplace_back(nn::Flatten{});
  nn::Dense d;
  d.in_features = width * in[1] * in[2];
  d.out_features = out_features;
  a.emplace_back(d);
  return nn::build_model(in, std::move(a), seed, "substitute");
}

double fidelity(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ShapeError("fidelity needs equally many predictions");
  if (a.empty()) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

nn::Tensor Model1Substitute::apply(const nn::Tensor& x) const {
  auto y = nn::forward(net, x);
  y.shape = out_shape;
  return y;
}

namespace {

nn::TrainConfig train_config(const MeaConfig& cfg, nn::Loss loss) {
  nn::TrainConfig tc;
  tc.lr = cfg.lr;
  tc.epochs = cfg.epochs;
  tc.batch = cfg.batch;
  tc.seed = cfg.seed;
  tc.loss = loss;
  return tc;
}

// Unknown layout: a dense stack with as many weighted layers as a
// dense/ReLU alternation of `tail_layers` layers would have.
nn::Model fresh_tail(const nn::Shape& in, std::size_t tail_layers, std::size_t classes, std::uint64_t seed) {
  std::vector<nn::LayerSpec> a;
  if (in.size() != 1) a.emplace_back(nn::Flatten{});
  std::size_t width = nn::numel(in);
  const std::size_t dense_layers = std::max<std::size_t>(1, (tail_layers + 1) / 2);
  for (std::size_t i = 0; i + 1 < dense_layers; ++i) {
    nn::Dense d;
    d.in_features = width;
    d.out_features = 32;
    a.emplace_back(d);
    a.emplace_back(nn::ReLU{});
    width = 32;
  }
  nn::Dense d;
  d.in_features = width;
  d.out_features = classes;
  a.emplace_back(d);
  return nn::build_model(in, std::move(a), seed, "substitute");
}

std::vector<int> victim_labels(VictimAccess& v, const nn::Dataset& d) {
  std::vector<int> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out.push_back(static_cast<int>(nn::argmax(v.query(d.sample(i)).logits)));
  return out;
}

}  // namespace

Model1Substitute train_model1_substitute(VictimAccess& victim, const nn::Dataset& attacker_data,
                                         const MeaConfig& cfg) {
  if (cfg.attacker_samples == 0) throw ParameterError("attacker_samples must be positive");
  if (cfg.attacker_samples > attacker_data.size()) {
    throw ParameterError("attacker_samples (" + std::to_string(cfg.attacker_samples) + ") exceeds the " +
                         std::to_string(attacker_data.size()) + " samples available");
  }
  Model1Substitute s;
  for (std::size_t i = 0; i < cfg.attacker_samples; ++i) {
    s.inputs.push_back(attacker_data.sample(i));
    s.observed.push_back(victim.query(s.inputs.back()).model1_out);
  }
  s.out_shape = s.observed.front().shape;
  // Regress on standardized targets, then fold the scaling into the last layer.
  const std::size_t f = nn::numel(s.out_shape);
  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (const auto& y : s.observed)
    for (std::size_t k = 0; k < f; ++k) mean[k] += y.data[k];
  for (auto& m : mean) m /= static_cast<double>(s.observed.size());
  for (const auto& y : s.observed)
    for (std::size_t k = 0; k < f; ++k) sd[k] += (y.data[k] - mean[k]) * (y.data[k] - mean[k]);
  for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(s.observed.size())), 1e-6);
  std::vector<nn::Tensor> targets;
  targets.reserve(s.observed.size());
  for (const auto& y : s.observed) {
    nn::Tensor t(nn::Shape{f}, y.data);
    for (std::size_t k = 0; k < f; ++k) t.data[k] = (t.data[k] - mean[k]) / sd[k];
    targets.push_back(std::move(t));
  }
  auto net = five_conv_substitute(victim.input_shape(), f, cfg.width, cfg.seed);
  auto tc = train_config(cfg, nn::Loss::MseLogits);
  tc.epochs = std::max(cfg.epochs, (cfg.min_steps * cfg.batch + s.inputs.size() - 1) / s.inputs.size());
  s.net = nn::train_sgd(std::move(net), s.inputs, {}, targets, tc).model;
  auto& last = std::get<nn::Dense>(s.net.layers.back());
  for (std::size_t o = 0; o < f; ++o) {
    for (std::size_t i = 0; i < last.in_features; ++i) last.weight[o * last.in_features + i] *= sd[o];
    last.bias[o] = last.bias[o] * sd[o] + mean[o];
  }
  return s;
}

MeaReport mea_run(VictimAccess& victim, const nn::Dataset& attacker_data, const nn::Dataset& held_out,
                  const MeaConfig& cfg, const Model1Substitute* m1) {
  MeaReport rep;
  rep.samples = cfg.attacker_samples;
  rep.enc_tail_layers = victim.enc_tail_layers();
  rep.seed = cfg.seed;
  if (rep.enc_tail_layers == 0) throw ParameterError("enc_tail_layers must be at least 1");
  try {
    Model1Substitute own;
    if (!m1) {
      own = train_model1_substitute(victim, attacker_data, cfg);
      m1 = &own;
    } else if (m1->inputs.size() != cfg.attacker_samples) {
      throw ParameterError("Model 1 substitute was trained on a different budget");
    }
    const auto& m2 = victim.model2();

    // M3' learns from Model 2 applied to what the protocol actually revealed.
    std::vector<nn::Tensor> h;
    h.reserve(m1->observed.size());
    for (const auto& y : m1->observed) h.push_back(nn::forward(m2, y));
    std::vector<int> labels(attacker_data.labels.begin(),
                            attacker_data.labels.begin() + static_cast<std::ptrdiff_t>(cfg.attacker_samples));
    const std::size_t classes = attacker_data.num_classes;
    nn::Model m3;
    if (auto layout = victim.tail_architecture()) {
      m3 = nn::build_model(h.front().shape, *layout, cfg.seed + 1, "substitute");
    } else {
      m3 = fresh_tail(h.front().shape, rep.enc_tail_layers, classes, cfg.seed + 1);
    }
    auto tc = train_config(cfg, nn::Loss::CrossEntropy);
    tc.seed = cfg.seed + 1;
    m3 = nn::train_sgd(std::move(m3), h, labels, {}, tc).model;

    double err = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < m1->inputs.size(); ++i) {
      const auto y = m1->apply(m1->inputs[i]);
      for (std::size_t k = 0; k < y.data.size(); ++k) {
        const double d = y.data[k] - m1->observed[i].data[k];
        err += d * d;
      }
      count += y.data.size();
    }
    rep.model1_mse = count ? err / static_cast<double>(count) : 0.0;

    const auto want = victim_labels(victim, held_out);
    std::vector<int> got;
    got.reserve(held_out.size());
    for (std::size_t i = 0; i < held_out.size(); ++i) {
      const auto z = nn::forward(m3, nn::forward(m2, m1->apply(held_out.sample(i))));
      got.push_back(static_cast<int>(nn::argmax(z)));
    }
    rep.fidelity = fidelity(want, got);
  } catch (const DivergenceError& e) {
    rep.failed = true;
    rep.failure = e.what();
    rep.fidelity = 0.0;
  }
  return rep;
}

MeaReport mea_full_access(VictimAccess& victim, const nn::Dataset& held_out) {
  auto parts = victim.reveal();
  if (!parts) throw ParameterError("victim does not reveal its parts");
  MeaReport rep;
  rep.enc_tail_layers = 0;
  const auto want = victim_labels(victim, held_out);
  std::vector<int> got;
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const auto z = nn::forward((*parts)[2], nn::forward((*parts)[1], nn::forward((*parts)[0], held_out.sample(i))));
    got.push_back(static_cast<int>(nn::argmax(z)));
  }
  rep.fidelity = fidelity(want, got);
  return rep;
}

nn::Dense recover_linear(VictimAccess& victim) {
  const auto& in = victim.input_shape();
  const std::size_t d = nn::numel(in);
  const auto b = victim.query(nn::Tensor(in)).model1_out;
  nn::Dense out;
  out.in_features = d;
  out.out_features = b.data.size();
  out.bias = b.data;
  out.weight.assign(out.out_features * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    nn::Tensor e(in);
    e.data[j] = 1.0;
    const auto y = victim.query(e).model1_out;
    for (std::size_t i = 0; i < out.out_features; ++i) out.weight[i * d + j] = y.data[i] - b.data[i];
  }
  return out;
}

}  // namespace splitfhe::attacks
