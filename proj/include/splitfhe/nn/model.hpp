#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitfhe/bytes.hpp"
#include "splitfhe/nn/layers.hpp"

namespace splitfhe::nn {

struct Model {
  Shape input_shape;
  std::size_t num_classes = 0;  // width of the final output
  std::vector<LayerSpec> layers;
  std::string provenance = "teacher";  // teacher / student / substitute / shadow / part

  Shape output_shape() const;
  // Shape entering layer i (i == layers.size() gives the output shape).
  Shape shape_at(std::size_t i) const;
  std::size_t parameter_count() const;
  bool operator==(const Model&) const = default;
};

// Throws ShapeError / FormatError when shapes do not chain, parameter vectors
// have the wrong length, or any weight is non-finite.
void validate(const Model& m);

Tensor forward(const Model& m, const Tensor& x);
// Activations entering each layer plus the final output (layers.size() + 1 tensors).
std::vector<Tensor> forward_trace(const Model& m, const Tensor& x);

// Kaiming-uniform weights, zero biases, identity batch norm.
void init_weights(Model& m, std::uint64_t seed);
// Allocates and initialises parameters for an architecture given without weights.
Model build_model(const Shape& input_shape, std::vector<LayerSpec> arch, std::uint64_t seed,
                  const std::string& provenance = "teacher");

// Named architectures used by fixtures, the CLI and the attack code:
//   fixture7  - conv(4,3x3) relu avgpool2 flatten dense16 relu dense  (7 layers)
//   tinyconv5 - five 3x3 convolutions with relu, avgpool, dense
//   student   - narrow conv + dense
//   mlp       - flatten dense64 relu dense
//   linear    - flatten dense
Model make_arch(const std::string& name, const Shape& input_shape, std::size_t num_classes, std::uint64_t seed);
std::vector<std::string> arch_names();

// Rounds every stored value to the nearest float, which is what the model file keeps.
void snap_to_float(Model& m);

// Model file: "SFM1" | u32 header length | JSON descriptor | f32 tensors in layer order.
Bytes serialize_model(const Model& m);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// Merges Conv2d/Dense layers with a directly following BatchNorm.
Model fold_batchnorm(const Model& m);

struct SplitSpec {
  std::size_t n = 1;  // layers in Model 1
  std::size_t z = 1;  // layers in Model 2
};

// Model 1 = first n layers, Model 2 = next z, Model 3 = the rest.
// Throws SplitError when n < 1, z < 1 or Model 3 would be empty.
std::array<Model, 3> split(const Model& m, const SplitSpec& spec);
Model concat(const Model& a, const Model& b);

// Degree-2 least-squares approximation of ReLU on [lo, hi] (uniform measure).
PolyAct fit_relu_poly(double lo, double hi);

// ReLU -> PolyAct (fitted to the activation range seen on `calibration`, or
// the square function when no calibration data is given), MaxPool -> AvgPool.
Model substitute_for_encryption(const Model& m, std::span<const Tensor> calibration);

}  // namespace splitfhe::nn
