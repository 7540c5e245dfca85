#pragma once

// Reference implementations used by both the unit tests and the acceptance
// runner. They are deliberately naive and share no code with the library paths
// they check.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "splitfhe/nn/layers.hpp"
#include "splitfhe/nn/train.hpp"
#include "splitfhe/random.hpp"

namespace oracle {

using splitfhe::Prng;
namespace nn = splitfhe::nn;

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double denom = std::max({norm(a), norm(b), 1e-12});
  return norm(d) / denom;
}

// Random layer of the given kind with shapes drawn from `rng`. Returns the
// layer and a compatible input shape.
inline std::pair<nn::LayerSpec, nn::Shape> random_layer(const std::string& kind, Prng& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.uniform_below(hi - lo + 1); };
  nn::LayerSpec layer;
  nn::Shape in;
  if (kind == "conv2d") {
    nn::Conv2d c;
    c.in_channels = pick(1, 3);
    c.out_channels = pick(1, 3);
    c.kernel = pick(1, 3);
    c.stride = pick(1, 2);
    c.padding = pick(0, 1);
    in = {c.in_channels, pick(c.kernel + 1, 6), pick(c.kernel + 1, 6)};
    layer = c;
  } else if (kind == "dense") {
    nn::Dense d;
    d.in_features = pick(1, 12);
    d.out_features = pick(1, 8);
    in = {d.in_features};
    layer = d;
  } else if (kind == "relu") {
    layer = nn::ReLU{};
    in = {pick(1, 3), pick(2, 5), pick(2, 5)};
  } else if (kind == "polyact") {
    layer = nn::PolyAct{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    in = {pick(1, 20)};
  } else if (kind == "avgpool" || kind == "maxpool") {
    const std::size_t w = pick(1, 3);
    in = {pick(1, 3), w * pick(1, 3), w * pick(1, 3)};
    if (kind == "avgpool") {
      layer = nn::AvgPool{w};
    } else {
      layer = nn::MaxPool{w};
    }
  } else if (kind == "batchnorm") {
    nn::BatchNorm b;
    b.channels = pick(1, 4);
    in = rng.uniform_below(2) ? nn::Shape{b.channels} : nn::Shape{b.channels, pick(1, 4), pick(1, 4)};
    layer = b;
  } else if (kind == "flatten") {
    layer = nn::Flatten{};
    in = {pick(1, 3), pick(1, 4), pick(1, 4)};
  }
  nn::allocate_params(layer);
  for (auto t : nn::stored_tensors(layer)) {
    for (auto& v : t) v = rng.uniform(-1.0, 1.0);
  }
  if (auto* b = std::get_if<nn::BatchNorm>(&layer)) {
    for (auto& v : b->var) v = rng.uniform(0.5, 2.0);
  }
  return {layer, in};
}

struct GradCheck {
  double input_rel = 0.0;
  double param_rel = 0.0;
};

// Central finite differences of L = sum(r * layer(x)) in double precision.
inline GradCheck gradient_check(const nn::LayerSpec& layer, const nn::Shape& in_shape, Prng& rng) {
  const double h = 1e-6;
  nn::Tensor x(in_shape);
  for (auto& v : x.data) v = rng.uniform(-2.0, 2.0);
  const nn::Tensor y = nn::forward_layer(layer, x);
  nn::Tensor r(y.shape);
  for (auto& v : r.data) v = rng.uniform(-1.0, 1.0);
  auto loss = [&](const nn::LayerSpec& l, const nn::Tensor& in) {
    const nn::Tensor out = nn::forward_layer(l, in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * r.data[i];
    return s;
  };

  std::vector<std::vector<double>> pgrads;
  for (auto p : nn::trainable_params(layer)) pgrads.emplace_back(p.size(), 0.0);
  const nn::Tensor gx = nn::backward_layer(layer, x, r, pgrads.empty() ? nullptr : &pgrads);

  GradCheck out;
  std::vector<double> num(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    nn::Tensor xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    num[i] = (loss(layer, xp) - loss(layer, xm)) / (2 * h);
  }
  out.input_rel = rel_error(gx.data, num);

  std::vector<double> analytic, numeric;
  nn::LayerSpec work = layer;
  auto params = nn::trainable_params(work);
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double orig = params[p][k];
      params[p][k] = orig + h;
      const double lp = loss(work, x);
      params[p][k] = orig - h;
      const double lm = loss(work, x);
      params[p][k] = orig;
      numeric.push_back((lp - lm) / (2 * h));
      analytic.push_back(pgrads[p][k]);
    }
  }
  if (!analytic.empty()) out.param_rel = rel_error(analytic, numeric);
  return out;
}

inline const std::vector<std::string>& differentiable_kinds() {
  static const std::vector<std::string> k{"conv2d", "dense", "relu", "polyact", "avgpool", "maxpool", "batchnorm",
                                          "flatten"};
  return k;
}

// Direct convolution with zero padding, written independently of the library.
inline std::vector<double> conv2d(const std::vector<double>& img, std::size_t C, std::size_t H, std::size_t W,
                                  const std::vector<double>& w, const std::vector<double>& b, std::size_t O,
                                  std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(O * Ho * Wo);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        double s = b.empty() ? 0.0 : b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const long yy = long(y * stride + i) - long(pad), xx = long(x * stride + j) - long(pad);
              if (yy >= 0 && xx >= 0 && yy < long(H) && xx < long(W))
                s += w[((o * C + c) * k + i) * k + j] * img[(c * H + yy) * W + xx];
            }
        out[(o * Ho + y) * Wo + x] = s;
      }
  return out;
}

}  // namespace oracle
