#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splitfhe/nn/dataset.hpp"
#include "splitfhe/nn/model.hpp"

namespace splitfhe::nn {

enum class Loss { CrossEntropy, MseLogits };

struct TrainConfig {
  double lr = 0.05;
  std::size_t epochs = 10;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  Loss loss = Loss::CrossEntropy;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;  // mean training loss per epoch
};

// Softmax cross-entropy of logits against a label; writes dL/dlogits if grad != nullptr.
double cross_entropy(const Tensor& logits, int label, Tensor* grad);
// Mean over outputs of (y - t)^2.
double mse(const Tensor& y, const Tensor& target, Tensor* grad);
std::vector<double> softmax(const Tensor& logits);

// Mini-batch SGD with momentum. Labels drive cross-entropy; mse_logits needs
// `targets` (one tensor per input, shaped like the model output).
TrainResult train_sgd(Model model, std::span<const Tensor> inputs, std::span<const int> labels,
                      std::span<const Tensor> targets, const TrainConfig& cfg);
TrainResult train_sgd(Model model, const Dataset& data, const TrainConfig& cfg);

// Gradient of the summed loss w.r.t. every trainable parameter, for one sample.
std::vector<std::vector<std::vector<double>>> parameter_gradients(const Model& m, const Tensor& x,
                                                                  const Tensor& grad_out_seed);

double accuracy(const Model& m, const Dataset& data);
std::vector<int> predict(const Model& m, std::span<const Tensor> inputs);

struct DistillResult {
  Model student;
  double initial_loss = 0.0;  // mse against teacher logits before any update
  std::vector<double> loss_curve;
  double teacher_accuracy = 0.0;
  double student_accuracy = 0.0;
};

// Trains the student on the teacher's raw logits with mse_logits. Accuracies
// are measured on `eval` (or on `data` when eval is empty).
DistillResult distill(const Model& teacher, Model student, const Dataset& data, const TrainConfig& cfg,
                      const Dataset& eval = {});

}  // namespace splitfhe::nn
