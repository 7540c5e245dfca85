#pragma once

// Small trained model shared by the protocol, attack and acceptance tests:
// fixture7 on 8x8 synthetic blobs. Built once per process.

#include <numeric>

#include "splitfhe/nn/dataset.hpp"
#include "splitfhe/nn/model.hpp"
#include "splitfhe/nn/train.hpp"

namespace fixture {

namespace nn = splitfhe::nn;

struct Trained {
  nn::Dataset train;
  nn::Dataset test;
  nn::Model model;
};

inline std::pair<nn::Dataset, nn::Dataset> synthetic_split(std::size_t train_per_class, std::size_t test_per_class,
                                                           std::uint64_t seed) {
  nn::SyntheticSpec spec;
  spec.per_class = train_per_class + test_per_class;
  const auto all = nn::gen_synthetic(spec, seed);
  // samples are interleaved by class, so a prefix is class balanced
  std::vector<std::size_t> a(train_per_class * spec.classes), b(test_per_class * spec.classes);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), a.size());
  return {all.subset(a), all.subset(b)};
}

inline const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    std::tie(out.train, out.test) = synthetic_split(64, 32, 2024);
    nn::TrainConfig cfg;
    cfg.epochs = 8;
    cfg.lr = 0.05;
    cfg.seed = 7;
    auto m = nn::make_arch("fixture7", out.train.sample_shape, out.train.num_classes, 7);
    out.model = nn::train_sgd(std::move(m), out.train, cfg).model;
    return out;
  }();
  return t;
}

}  // namespace fixture
