#include "splitfhe/nn/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "splitfhe/bytes.hpp"
#include "splitfhe/error.hpp"
#include "splitfhe/random.hpp"

namespace splitfhe::nn {

namespace fs = std::filesystem;

Tensor Dataset::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return Tensor(sample_shape, std::vector<double>(pixels.begin() + i * n, pixels.begin() + (i + 1) * n));
}

std::vector<Tensor> Dataset::samples() const {
  std::vector<Tensor> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(sample(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset d;
  d.sample_shape = sample_shape;
  d.num_classes = num_classes;
  const std::size_t n = sample_size();
  d.pixels.reserve(idx.size() * n);
  for (std::size_t i : idx) {
    if (i >= size()) throw ShapeError("subset index out of range");
    d.pixels.insert(d.pixels.end(), pixels.begin() + i * n, pixels.begin() + (i + 1) * n);
    d.labels.push_back(labels[i]);
    if (!tags.empty()) d.tags.push_back(tags[i]);
  }
  return d;
}

Dataset Dataset::with_tag(SampleTag tag) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == tag) idx.push_back(i);
  }
  return subset(idx);
}

void Dataset::append(const Tensor& x, int label, SampleTag tag) {
  if (x.shape != sample_shape) throw ShapeError("sample shape mismatch");
  pixels.insert(pixels.end(), x.data.begin(), x.data.end());
  labels.push_back(label);
  if (!tags.empty() || tag != SampleTag::None) {
    tags.resize(labels.size() - 1, SampleTag::None);
    tags.push_back(tag);
  }
}

Dataset load_cifar10_file(const std::string& path) {
  constexpr std::size_t kRecord = 1 + 3072;
  const Bytes raw = read_file(path);
  if (raw.empty()) throw FormatError(path + ": empty CIFAR-10 batch");
  if (raw.size() % kRecord != 0) {
    throw FormatError(path + ": size " + std::to_string(raw.size()) + " is not a multiple of 3073");
  }
  Dataset d;
  d.sample_shape = {3, 32, 32};
  d.num_classes = 10;
  const std::size_t count = raw.size() / kRecord;
  d.labels.resize(count);
  d.pixels.resize(count * 3072);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = raw.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError(path + ": label " + std::to_string(rec[0]) + " out of range");
    d.labels[i] = rec[0];
    for (std::size_t k = 0; k < 3072; ++k) d.pixels[i * 3072 + k] = rec[1 + k] / 255.0;
  }
  return d;
}

Dataset load_cifar10(const std::string& dir, bool train) {
  std::vector<std::string> files;
  if (train) {
    for (int b = 1; b <= 5; ++b) {
      const auto p = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
      if (fs::exists(p)) files.push_back(p.string());
    }
  } else {
    const auto p = fs::path(dir) / "test_batch.bin";
    if (fs::exists(p)) files.push_back(p.string());
  }
  if (files.empty()) throw IoError("no CIFAR-10 batch files in " + dir);
  Dataset all = load_cifar10_file(files[0]);
  for (std::size_t f = 1; f < files.size(); ++f) {
    Dataset more = load_cifar10_file(files[f]);
    all.pixels.insert(all.pixels.end(), more.pixels.begin(), more.pixels.end());
    all.labels.insert(all.labels.end(), more.labels.begin(), more.labels.end());
  }
  return all;
}

namespace {

std::uint32_t read_be32(ByteReader& r) {
  auto b = r.take(4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void put_be32(ByteWriter& w, std::uint32_t v) {
  w.put_u8(static_cast<std::uint8_t>(v >> 24));
  w.put_u8(static_cast<std::uint8_t>(v >> 16));
  w.put_u8(static_cast<std::uint8_t>(v >> 8));
  w.put_u8(static_cast<std::uint8_t>(v));
}

}  // namespace

Dataset load_mnist_files(const std::string& images_path, const std::string& labels_path) {
  const Bytes img = read_file(images_path);
  const Bytes lab = read_file(labels_path);
  ByteReader ri(img);
  ByteReader rl(lab);
  if (read_be32(ri) != 2051) throw FormatError(images_path + ": bad IDX image magic");
  if (read_be32(rl) != 2049) throw FormatError(labels_path + ": bad IDX label magic");
  const std::uint32_t count = read_be32(ri);
  const std::uint32_t rows = read_be32(ri);
  const std::uint32_t cols = read_be32(ri);
  const std::uint32_t nlab = read_be32(rl);
  if (count != nlab) throw FormatError("image count " + std::to_string(count) + " != label count " + std::to_string(nlab));
  const std::size_t px = std::size_t{rows} * cols;
  auto pix = ri.take(std::size_t{count} * px);
  auto labs = rl.take(count);
  Dataset d;
  d.sample_shape = {1, rows, cols};
  d.pixels.resize(pix.size());
  for (std::size_t i = 0; i < pix.size(); ++i) d.pixels[i] = pix[i] / 255.0;
  d.labels.assign(labs.begin(), labs.end());
  int max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, l);
  d.num_classes = std::max(10, max_label + 1);
  return d;
}

Dataset load_mnist_idx(const std::string& dir, const std::string& prefix) {
  const auto base = fs::path(dir);
  for (const char* sep : {"-", "."}) {
    const auto img = base / (prefix + sep + "images-idx3-ubyte");
    const auto lab = base / (prefix + sep + "labels-idx1-ubyte");
    if (fs::exists(img) && fs::exists(lab)) return load_mnist_files(img.string(), lab.string());
  }
  throw IoError("no MNIST IDX files with prefix '" + prefix + "' in " + dir);
}

void write_mnist_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  if (d.sample_shape.size() != 3 || d.sample_shape[0] != 1) throw ShapeError("IDX export needs [1,H,W] samples");
  ByteWriter wi, wl;
  put_be32(wi, 2051);
  put_be32(wi, static_cast<std::uint32_t>(d.size()));
  put_be32(wi, static_cast<std::uint32_t>(d.sample_shape[1]));
  put_be32(wi, static_cast<std::uint32_t>(d.sample_shape[2]));
  for (double p : d.pixels) wi.put_u8(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
  put_be32(wl, 2049);
  put_be32(wl, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) wl.put_u8(static_cast<std::uint8_t>(l));
  write_file(images_path, wi.bytes());
  write_file(labels_path, wl.bytes());
}

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes == 0 || spec.per_class == 0 || spec.modes_per_class == 0) {
    throw ParameterError("synthetic dataset needs classes, samples and modes > 0");
  }
  Prng rng(seed);
  const std::size_t n = numel(spec.shape);
  std::vector<std::vector<double>> protos(spec.classes * spec.modes_per_class, std::vector<double>(n));
  for (auto& p : protos) {
    for (auto& v : p) v = rng.uniform(0.1, 0.9);
  }
  Dataset d;
  d.sample_shape = spec.shape;
  d.num_classes = spec.classes;
  d.pixels.reserve(spec.classes * spec.per_class * n);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const auto& p = protos[c * spec.modes_per_class + rng.uniform_below(spec.modes_per_class)];
      for (std::size_t k = 0; k < n; ++k) d.pixels.push_back(std::clamp(p[k] + rng.normal() * spec.noise, 0.0, 1.0));
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

}  // namespace splitfhe::nn
