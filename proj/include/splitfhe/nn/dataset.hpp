#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitfhe/nn/tensor.hpp"

namespace splitfhe::nn {

enum class SampleTag : std::uint8_t { None, Train, Test, Member, NonMember };

// Images are stored contiguously, one sample_shape block per sample, values in [0, 1].
struct Dataset {
  Shape sample_shape;
  std::size_t num_classes = 0;
  std::vector<double> pixels;
  std::vector<int> labels;
  std::vector<SampleTag> tags;  // empty or one per sample

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return numel(sample_shape); }
  Tensor sample(std::size_t i) const;
  std::vector<Tensor> samples() const;
  Dataset subset(std::span<const std::size_t> idx) const;
  Dataset with_tag(SampleTag tag) const;
  void append(const Tensor& x, int label, SampleTag tag = SampleTag::None);
};

// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes (R, G, B planes).
Dataset load_cifar10_file(const std::string& path);
// Reads data_batch_*.bin (train) or test_batch.bin (test) from a directory.
Dataset load_cifar10(const std::string& dir, bool train = true);

// MNIST IDX pair (images: magic 2051, labels: magic 2049, big-endian headers).
Dataset load_mnist_files(const std::string& images_path, const std::string& labels_path);
// Looks for <prefix>-images-idx3-ubyte / <prefix>-labels-idx1-ubyte, prefix "train" or "t10k".
Dataset load_mnist_idx(const std::string& dir, const std::string& prefix = "train");
void write_mnist_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t per_class = 64;
  Shape shape{1, 8, 8};
  double noise = 0.15;          // per-pixel Gaussian std around the class mode
  std::size_t modes_per_class = 1;
};

// Gaussian blob clusters around random class prototypes, clipped to [0, 1].
// Samples are interleaved by class; identical seeds give identical datasets.
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace splitfhe::nn
