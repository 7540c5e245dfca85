#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "splitfhe/nn/tensor.hpp"

namespace splitfhe::nn {

// weight is [out, in, k, k], bias is [out].
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  bool operator==(const Conv2d&) const = default;
};

// weight is [out, in].
struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  bool operator==(const Dense&) const = default;
};

struct ReLU {
  bool operator==(const ReLU&) const = default;
};

// c2 * x^2 + c1 * x + c0, elementwise.
struct PolyAct {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 1.0;
  bool operator==(const PolyAct&) const = default;
};

// Non-overlapping window x window pooling (stride = window).
struct AvgPool {
  std::size_t window = 2;
  bool operator==(const AvgPool&) const = default;
};

struct MaxPool {
  std::size_t window = 2;
  bool operator==(const MaxPool&) const = default;
};

// Inference-form batch norm over the leading (channel) axis. Only gamma and
// beta are trained; mean and var are fixed statistics.
struct BatchNorm {
  std::size_t channels = 0;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> var;
  double eps = 1e-5;
  bool operator==(const BatchNorm&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

using LayerSpec = std::variant<Conv2d, Dense, ReLU, PolyAct, AvgPool, MaxPool, BatchNorm, Flatten>;

std::string kind_name(const LayerSpec& layer);

// Throws ShapeError if the layer cannot consume `in`.
Shape output_shape(const LayerSpec& layer, const Shape& in);

// Resizes empty parameter vectors to match the layer's declared dimensions.
void allocate_params(LayerSpec& layer);
// Trainable parameters, in a fixed order.
std::vector<std::span<double>> trainable_params(LayerSpec& layer);
std::vector<std::span<const double>> trainable_params(const LayerSpec& layer);
// Every persisted tensor (trainable + fixed statistics), in file order.
std::vector<std::span<double>> stored_tensors(LayerSpec& layer);
std::vector<std::span<const double>> stored_tensors(const LayerSpec& layer);
std::size_t stored_count(const LayerSpec& layer);

Tensor forward_layer(const LayerSpec& layer, const Tensor& in);

// Given the layer's input and the gradient of the loss w.r.t. its output,
// returns the gradient w.r.t. the input and accumulates parameter gradients
// into `param_grads` (same layout as trainable_params; may be empty to skip).
Tensor backward_layer(const LayerSpec& layer, const Tensor& in, const Tensor& grad_out,
                      std::vector<std::vector<double>>* param_grads);

}  // namespace splitfhe::nn
