#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "splitfhe/attacks/attacks.hpp"
#include "splitfhe/error.hpp"
#include "splitfhe/random.hpp"

namespace splitfhe::attacks {

const char* mia_kind_name(MiaKind k) {
  switch (k) {
    case MiaKind::ShadowTrained: return "shadow";
    case MiaKind::Threshold: return "threshold";
    case MiaKind::TrainedKNN: return "knn";
    case MiaKind::TrainedLogistic: return "logistic";
    case MiaKind::TrainedMLP: return "mlp";
  }
  return "?";
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) return 0.5;
  // Mann-Whitney U with average ranks for ties.
  std::vector<std::pair<double, int>> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum += avg;
    }
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn_ = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn_);
}

namespace {

// Best "score > t" rule; t = -inf predicts everything as member.
std::pair<double, double> best_threshold(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) return {0.0, std::numeric_limits<double>::infinity()};
  std::vector<std::pair<double, int>> all;
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double np = static_cast<double>(pos.size()), nn_ = static_cast<double>(neg.size());
  double best = 0.0, best_t = std::numeric_limits<double>::infinity();
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? tp : fp)++;
      ++j;
    }
    // Every score >= all[i].first is now predicted member.
    const double t = j < all.size() ? all[j].first : -std::numeric_limits<double>::infinity();
    const double adv = static_cast<double>(tp) / np - static_cast<double>(fp) / nn_;
    if (adv > best) {
      best = adv;
      best_t = t;
    }
    i = j;
  }
  return {best, best_t};
}

}  // namespace

double max_advantage(std::span<const double> pos, std::span<const double> neg) {
  return best_threshold(pos, neg).first;
}

double precision_at(std::span<const double> pos, std::span<const double> neg, double threshold) {
  const auto tp = std::count_if(pos.begin(), pos.end(), [&](double s) { return s > threshold; });
  const auto fp = std::count_if(neg.begin(), neg.end(), [&](double s) { return s > threshold; });
  if (tp + fp == 0) {
    const double total = static_cast<double>(pos.size() + neg.size());
    return total > 0 ? static_cast<double>(pos.size()) / total : 0.5;
  }
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::vector<double> example_losses(const nn::Model& victim, const nn::Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(nn::cross_entropy(nn::forward(victim, data.sample(i)), data.labels[i], nullptr));
  }
  return out;
}

namespace {

// Scores plus labels for one attack evaluation. `fixed` is the decision
// threshold of a classifier; without it the best threshold is used.
struct Scored {
  std::vector<double> member, non_member;
  std::vector<int> member_cls, non_member_cls;
};

MiaRow row_for(MiaKind kind, const std::string& cls, std::span<const double> pos, std::span<const double> neg,
               std::optional<double> fixed) {
  MiaRow r;
  r.kind = mia_kind_name(kind);
  r.cls = cls;
  const auto [adv, t] = best_threshold(pos, neg);
  r.auc = roc_auc(pos, neg);
  r.advantage = adv;
  r.precision = precision_at(pos, neg, fixed ? *fixed : t);
  return r;
}

MiaReport build_report(MiaKind kind, const Scored& s, std::size_t classes, std::optional<double> fixed) {
  MiaReport rep;
  rep.kind = kind;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < s.member.size(); ++i) {
      if (s.member_cls[i] == static_cast<int>(c)) pos.push_back(s.member[i]);
    }
    for (std::size_t i = 0; i < s.non_member.size(); ++i) {
      if (s.non_member_cls[i] == static_cast<int>(c)) neg.push_back(s.non_member[i]);
    }
    rep.per_class.push_back(row_for(kind, std::to_string(c), pos, neg, fixed));
  }
  auto all = row_for(kind, "all", s.member, s.non_member, fixed);
  rep.auc = all.auc;
  rep.advantage = all.advantage;
  rep.precision = all.precision;
  rep.per_class.push_back(std::move(all));
  return rep;
}

using Features = std::vector<std::vector<double>>;

// Log-probabilities of the victim's output, largest first, plus the
// example's loss for the trained attacks.
std::vector<double> confidence_features(const nn::Model& m, const nn::Tensor& x, int label, bool with_loss) {
  const auto logits = nn::forward(m, x);
  const auto p = nn::softmax(logits);
  std::vector<double> f;
  f.reserve(p.size() + 1);
  for (double v : p) f.push_back(std::log(std::max(v, 1e-12)));
  std::sort(f.begin(), f.end(), std::greater<>());
  if (with_loss) f.push_back(nn::cross_entropy(logits, label, nullptr));
  return f;
}

struct Standardizer {
  std::vector<double> mean, inv_std;

  explicit Standardizer(const Features& x) {
    const std::size_t d = x.empty() ? 0 : x.front().size();
    mean.assign(d, 0.0);
    inv_std.assign(d, 1.0);
    if (x.empty()) return;
    for (const auto& r : x) {
      for (std::size_t k = 0; k < d; ++k) mean[k] += r[k];
    }
    for (auto& m : mean) m /= static_cast<double>(x.size());
    std::vector<double> var(d, 0.0);
    for (const auto& r : x) {
      for (std::size_t k = 0; k < d; ++k) var[k] += (r[k] - mean[k]) * (r[k] - mean[k]);
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double sd = std::sqrt(var[k] / static_cast<double>(x.size()));
      inv_std[k] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
  }
  std::vector<double> operator()(const std::vector<double>& r) const {
    std::vector<double> out(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) out[k] = (r[k] - mean[k]) * inv_std[k];
    return out;
  }
  Features operator()(const Features& x) const {
    Features out;
    out.reserve(x.size());
    for (const auto& r : x) out.push_back((*this)(r));
    return out;
  }
};

// L2-regularised logistic regression by full-batch gradient descent.
class Logistic {
 public:
  void fit(const Features& x, std::span<const int> y, double l2 = 1e-3, std::size_t iters = 400, double lr = 0.5) {
    const std::size_t d = x.empty() ? 0 : x.front().size();
    w_.assign(d, 0.0);
    b_ = 0.0;
    if (x.empty()) return;
    const double n = static_cast<double>(x.size());
    std::vector<double> gw(d);
    for (std::size_t it = 0; it < iters; ++it) {
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = prob(x[i]) - y[i];
        for (std::size_t k = 0; k < d; ++k) gw[k] += e * x[i][k];
        gb += e;
      }
      for (std::size_t k = 0; k < d; ++k) w_[k] -= lr * (gw[k] / n + l2 * w_[k]);
      b_ -= lr * gb / n;
    }
  }
  double prob(const std::vector<double>& r) const {
    double z = b_;
    for (std::size_t k = 0; k < w_.size(); ++k) z += w_[k] * r[k];
    return 1.0 / (1.0 + std::exp(-z));
  }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
};

std::vector<double> knn_scores(const Features& train, std::span<const int> y, const Features& test, std::size_t k) {
  k = std::min(k, train.size());
  std::vector<double> out;
  out.reserve(test.size());
  std::vector<std::pair<double, int>> dist(train.size());
  for (const auto& q : test) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) d += (q[j] - train[i][j]) * (q[j] - train[i][j]);
      dist[i] = {d, y[i]};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    double members = 0.0;
    for (std::size_t i = 0; i < k; ++i) members += dist[i].second;
    out.push_back(members / static_cast<double>(k));
  }
  return out;
}

std::vector<double> mlp_scores(const Features& train, std::span<const int> y, const Features& test,
                               std::uint64_t seed) {
  const std::size_t d = train.front().size();
  nn::Dense h, o;
  h.in_features = d;
  h.out_features = 32;
  o.in_features = 32;
  o.out_features = 2;
  auto m = nn::build_model({d}, {h, nn::ReLU{}, o}, seed, "substitute");
  std::vector<nn::Tensor> xs;
  xs.reserve(train.size());
  for (const auto& r : train) xs.emplace_back(nn::Shape{d}, r);
  nn::TrainConfig tc;
  tc.lr = 0.05;
  tc.epochs = 40;
  tc.batch = 32;
  tc.seed = seed;
  m = nn::train_sgd(std::move(m), xs, y, {}, tc).model;
  std::vector<double> out;
  out.reserve(test.size());
  for (const auto& r : test) out.push_back(nn::softmax(nn::forward(m, nn::Tensor({d}, r)))[1]);
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, Prng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx.begin(), idx.end());
  return idx;
}

}  // namespace

MiaReport mia_threshold_losses(std::span<const double> member_losses, std::span<const double> non_member_losses) {
  Scored s;
  for (double l : member_losses) s.member.push_back(-l);
  for (double l : non_member_losses) s.non_member.push_back(-l);
  s.member_cls.assign(s.member.size(), 0);
  s.non_member_cls.assign(s.non_member.size(), 0);
  auto rep = build_report(MiaKind::Threshold, s, 0, std::nullopt);
  return rep;
}

MiaReport mia_threshold(const nn::Model& victim, const nn::Dataset& members, const nn::Dataset& non_members) {
  Scored s;
  for (double l : example_losses(victim, members)) s.member.push_back(-l);
  for (double l : example_losses(victim, non_members)) s.non_member.push_back(-l);
  s.member_cls = members.labels;
  s.non_member_cls = non_members.labels;
  return build_report(MiaKind::Threshold, s, victim.num_classes, std::nullopt);
}

MiaReport mia_shadow(const nn::Model& victim, const nn::Dataset& pool, const nn::Dataset& members,
                     const nn::Dataset& non_members, const MiaConfig& cfg) {
  if (cfg.shadow_count == 0) throw ParameterError("shadow attack needs at least one shadow model");
  if (!(cfg.attacker_data_fraction > 0.0 && cfg.attacker_data_fraction <= 1.0)) {
    throw ParameterError("attacker_data_fraction must lie in (0, 1]");
  }
  const std::size_t classes = victim.num_classes;
  Prng rng(cfg.seed);
  const auto order = shuffled(pool.size(), rng);
  const auto used = static_cast<std::size_t>(cfg.attacker_data_fraction * static_cast<double>(pool.size()));
  const std::size_t chunk = used / cfg.shadow_count;
  if (chunk < 2) throw ParameterError("attacker data too small for " + std::to_string(cfg.shadow_count) + " shadows");

  // Per-class training sets for the membership classifiers.
  std::vector<Features> feats(classes);
  std::vector<std::vector<int>> in_out(classes);
  for (std::size_t s = 0; s < cfg.shadow_count; ++s) {
    std::vector<std::size_t> in_idx(order.begin() + static_cast<std::ptrdiff_t>(s * chunk),
                                    order.begin() + static_cast<std::ptrdiff_t>(s * chunk + chunk / 2));
    std::vector<std::size_t> out_idx(order.begin() + static_cast<std::ptrdiff_t>(s * chunk + chunk / 2),
                                     order.begin() + static_cast<std::ptrdiff_t>((s + 1) * chunk));
    const auto in = pool.subset(in_idx);
    auto tc = cfg.train;
    tc.seed = cfg.seed + s;
    auto shadow = nn::make_arch(cfg.arch, pool.sample_shape, classes, cfg.seed + s);
    shadow.provenance = "shadow";
    shadow = nn::train_sgd(std::move(shadow), in, tc).model;
    for (int member = 1; member >= 0; --member) {
      for (std::size_t i : member ? in_idx : out_idx) {
        const int c = pool.labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= classes) throw ShapeError("label outside the victim's classes");
        feats[c].push_back(confidence_features(shadow, pool.sample(i), c, false));
        in_out[c].push_back(member);
      }
    }
  }

  // A class the shadows never saw both in and out of the training set falls
  // back to one classifier over all classes.
  Features all_feats;
  std::vector<int> all_in_out;
  for (std::size_t c = 0; c < classes; ++c) {
    all_feats.insert(all_feats.end(), feats[c].begin(), feats[c].end());
    all_in_out.insert(all_in_out.end(), in_out[c].begin(), in_out[c].end());
  }
  const Standardizer global_scale(all_feats);
  Logistic global;
  global.fit(global_scale(all_feats), all_in_out);

  std::vector<Logistic> models(classes);
  std::vector<std::optional<Standardizer>> scalers(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto members_seen = std::count(in_out[c].begin(), in_out[c].end(), 1);
    if (members_seen == 0 || members_seen == static_cast<std::ptrdiff_t>(in_out[c].size())) continue;
    scalers[c].emplace(feats[c]);
    models[c].fit((*scalers[c])(feats[c]), in_out[c]);
  }
  auto score = [&](const nn::Dataset& d, std::vector<double>& out) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int c = d.labels[i];
      if (c < 0 || static_cast<std::size_t>(c) >= classes) throw ShapeError("label outside the victim's classes");
      const auto f = confidence_features(victim, d.sample(i), c, false);
      out.push_back(scalers[c] ? models[c].prob((*scalers[c])(f)) : global.prob(global_scale(f)));
    }
  };
  Scored s;
  score(members, s.member);
  score(non_members, s.non_member);
  s.member_cls = members.labels;
  s.non_member_cls = non_members.labels;
  return build_report(MiaKind::ShadowTrained, s, classes, 0.5);
}

MiaReport mia_trained(const nn::Model& victim, const nn::Dataset& members, const nn::Dataset& non_members,
                      MiaKind kind, std::uint64_t seed) {
  if (kind != MiaKind::TrainedKNN && kind != MiaKind::TrainedLogistic && kind != MiaKind::TrainedMLP) {
    throw ParameterError(std::string("mia_trained does not run the ") + mia_kind_name(kind) + " attack");
  }
  if (members.size() < 4 || non_members.size() < 4) throw ParameterError("trained attack needs at least 4 samples per set");
  Prng rng(seed);
  Features train_x, test_x;
  std::vector<int> train_y, test_y, test_cls;
  for (int member = 1; member >= 0; --member) {
    const auto& d = member ? members : non_members;
    const auto order = shuffled(d.size(), rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t i = order[k];
      auto f = confidence_features(victim, d.sample(i), d.labels[i], true);
      if (k < order.size() / 2) {
        train_x.push_back(std::move(f));
        train_y.push_back(member);
      } else {
        test_x.push_back(std::move(f));
        test_y.push_back(member);
        test_cls.push_back(d.labels[i]);
      }
    }
  }
  const Standardizer st(train_x);
  train_x = st(train_x);
  test_x = st(test_x);

  std::vector<double> scores;
  switch (kind) {
    case MiaKind::TrainedKNN:
      scores = knn_scores(train_x, train_y, test_x, 15);
      break;
    case MiaKind::TrainedLogistic: {
      Logistic lr;
      lr.fit(train_x, train_y);
      for (const auto& r : test_x) scores.push_back(lr.prob(r));
      break;
    }
    default:
      scores = mlp_scores(train_x, train_y, test_x, seed);
  }
  Scored s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (test_y[i] ? s.member : s.non_member).push_back(scores[i]);
    (test_y[i] ? s.member_cls : s.non_member_cls).push_back(test_cls[i]);
  }
  return build_report(kind, s, victim.num_classes, 0.5);
}

}  // namespace splitfhe::attacks
