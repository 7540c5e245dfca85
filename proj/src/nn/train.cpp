#include "splitfhe/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitfhe/error.hpp"
#include "splitfhe/random.hpp"

namespace splitfhe::nn {

std::vector<double> softmax(const Tensor& logits) {
  const double mx = *std::max_element(logits.data.begin(), logits.data.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits.data[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double cross_entropy(const Tensor& logits, int label, Tensor* grad) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw ShapeError("label out of range");
  const auto p = softmax(logits);
  if (grad) {
    *grad = Tensor(logits.shape, p);
    grad->data[label] -= 1.0;
  }
  return -std::log(std::max(p[label], 1e-300));
}

double mse(const Tensor& y, const Tensor& target, Tensor* grad) {
  if (y.size() != target.size()) throw ShapeError("mse target size mismatch");
  const double inv = 1.0 / static_cast<double>(y.size());
  double loss = 0.0;
  if (grad) *grad = Tensor(y.shape);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y.data[i] - target.data[i];
    loss += d * d;
    if (grad) grad->data[i] = 2.0 * d * inv;
  }
  return loss * inv;
}

namespace {

using Grads = std::vector<std::vector<std::vector<double>>>;

Grads zero_grads(const Model& m) {
  Grads g(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    for (auto p : trainable_params(m.layers[i])) g[i].emplace_back(p.size(), 0.0);
  }
  return g;
}

void backprop(const Model& m, const std::vector<Tensor>& trace, Tensor grad, Grads& g) {
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    grad = backward_layer(m.layers[i], trace[i], grad, g[i].empty() ? nullptr : &g[i]);
  }
}

}  // namespace

Grads parameter_gradients(const Model& m, const Tensor& x, const Tensor& grad_out_seed) {
  Grads g = zero_grads(m);
  backprop(m, forward_trace(m, x), grad_out_seed, g);
  return g;
}

TrainResult train_sgd(Model model, std::span<const Tensor> inputs, std::span<const int> labels,
                      std::span<const Tensor> targets, const TrainConfig& cfg) {
  const std::size_t n = inputs.size();
  if (n == 0) throw ParameterError("training set is empty");
  const bool use_mse = cfg.loss == Loss::MseLogits;
  if (use_mse && targets.size() != n) throw ParameterError("mse_logits training needs one target per input");
  if (!use_mse && labels.size() != n) throw ParameterError("cross-entropy training needs one label per input");
  if (cfg.batch == 0) throw ParameterError("batch size must be positive");

  Prng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Grads velocity = zero_grads(model);
  std::vector<double> sample_loss(n);
  TrainResult result;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t end = std::min(n, start + cfg.batch);
      Grads g = zero_grads(model);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        auto trace = forward_trace(model, inputs[idx]);
        Tensor grad;
        sample_loss[idx] = use_mse ? mse(trace.back(), targets[idx], &grad)
                                   : cross_entropy(trace.back(), labels[idx], &grad);
        if (!std::isfinite(sample_loss[idx])) {
          throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch + 1));
        }
        backprop(model, trace, std::move(grad), g);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto params = trainable_params(model.layers[li]);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
          auto& v = velocity[li][pi];
          const auto& gr = g[li][pi];
          for (std::size_t k = 0; k < params[pi].size(); ++k) {
            const double step = gr[k] * scale + cfg.weight_decay * params[pi][k];
            v[k] = cfg.momentum * v[k] + step;
            params[pi][k] -= cfg.lr * v[k];
            if (!std::isfinite(params[pi][k])) {
              throw DivergenceError("weights became non-finite in epoch " + std::to_string(epoch + 1));
            }
          }
        }
      }
    }
    // Summed in index order so the value does not depend on the shuffle.
    result.loss_curve.push_back(std::accumulate(sample_loss.begin(), sample_loss.end(), 0.0) / n);
  }
  snap_to_float(model);
  result.model = std::move(model);
  return result;
}

TrainResult train_sgd(Model model, const Dataset& data, const TrainConfig& cfg) {
  const auto inputs = data.samples();
  if (cfg.loss == Loss::MseLogits) {
    throw ParameterError("mse_logits training on a labelled dataset needs explicit targets");
  }
  return train_sgd(std::move(model), inputs, data.labels, {}, cfg);
}

std::vector<int> predict(const Model& m, std::span<const Tensor> inputs) {
  std::vector<int> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(static_cast<int>(argmax(forward(m, x))));
  return out;
}

double accuracy(const Model& m, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<int>(argmax(forward(m, data.sample(i)))) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / data.size();
}

DistillResult distill(const Model& teacher, Model student, const Dataset& data, const TrainConfig& cfg,
                      const Dataset& eval) {
  if (teacher.input_shape != student.input_shape) throw ShapeError("teacher and student input shapes differ");
  if (teacher.output_shape() != student.output_shape()) throw ShapeError("teacher and student output shapes differ");
  const auto inputs = data.samples();
  std::vector<Tensor> targets;
  targets.reserve(inputs.size());
  for (const auto& x : inputs) targets.push_back(forward(teacher, x));

  DistillResult r;
  double init = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) init += mse(forward(student, inputs[i]), targets[i], nullptr);
  r.initial_loss = inputs.empty() ? 0.0 : init / inputs.size();

  TrainConfig c = cfg;
  c.loss = Loss::MseLogits;
  auto trained = train_sgd(std::move(student), inputs, {}, targets, c);
  r.student = std::move(trained.model);
  r.student.provenance = "student";
  r.loss_curve = std::move(trained.loss_curve);
  const Dataset& ev = eval.size() ? eval : data;
  r.teacher_accuracy = accuracy(teacher, ev);
  r.student_accuracy = accuracy(r.student, ev);
  return r;
}

}  // namespace splitfhe::nn
