#include "splitfhe/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "splitfhe/error.hpp"

namespace splitfhe::nn {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.data.begin(), t.data.end()) - t.data.begin());
}

std::string kind_name(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Conv2d&) { return std::string("conv2d"); },
                        [](const Dense&) { return std::string("dense"); },
                        [](const ReLU&) { return std::string("relu"); },
                        [](const PolyAct&) { return std::string("polyact"); },
                        [](const AvgPool&) { return std::string("avgpool"); },
                        [](const MaxPool&) { return std::string("maxpool"); },
                        [](const BatchNorm&) { return std::string("batchnorm"); },
                        [](const Flatten&) { return std::string("flatten"); },
                    },
                    layer);
}

namespace {

void require(bool ok, const std::string& layer, const Shape& in) {
  if (!ok) throw ShapeError(layer + " cannot take input of shape " + shape_str(in));
}

Shape pool_shape(const char* name, std::size_t window, const Shape& in) {
  require(in.size() == 3 && window >= 1 && in[1] >= window && in[2] >= window, name, in);
  return {in[0], in[1] / window, in[2] / window};
}

std::size_t conv_out(std::size_t size, const Conv2d& c) { return (size + 2 * c.padding - c.kernel) / c.stride + 1; }

// Number of elements per channel for batch norm: 1 for vectors.
std::size_t bn_inner(const Shape& s) { return s.size() == 1 ? 1 : numel(s) / s[0]; }

}  // namespace

Shape output_shape(const LayerSpec& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const Conv2d& c) -> Shape {
            require(in.size() == 3 && in[0] == c.in_channels && c.kernel >= 1 && c.stride >= 1 &&
                        in[1] + 2 * c.padding >= c.kernel && in[2] + 2 * c.padding >= c.kernel,
                    "conv2d", in);
            return {c.out_channels, conv_out(in[1], c), conv_out(in[2], c)};
          },
          [&](const Dense& d) -> Shape {
            require(in.size() == 1 && in[0] == d.in_features, "dense", in);
            return {d.out_features};
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const PolyAct&) -> Shape { return in; },
          [&](const AvgPool& p) -> Shape { return pool_shape("avgpool", p.window, in); },
          [&](const MaxPool& p) -> Shape { return pool_shape("maxpool", p.window, in); },
          [&](const BatchNorm& b) -> Shape {
            require(!in.empty() && in[0] == b.channels, "batchnorm", in);
            return in;
          },
          [&](const Flatten&) -> Shape { return {numel(in)}; },
      },
      layer);
}

void allocate_params(LayerSpec& layer) {
  std::visit(overloaded{
                 [](Conv2d& c) {
                   c.weight.resize(c.out_channels * c.in_channels * c.kernel * c.kernel);
                   c.bias.resize(c.out_channels);
                 },
                 [](Dense& d) {
                   d.weight.resize(d.out_features * d.in_features);
                   d.bias.resize(d.out_features);
                 },
                 [](BatchNorm& b) {
                   b.gamma.resize(b.channels, 1.0);
                   b.beta.resize(b.channels, 0.0);
                   b.mean.resize(b.channels, 0.0);
                   b.var.resize(b.channels, 1.0);
                 },
                 [](auto&) {},
             },
             layer);
}

std::vector<std::span<double>> trainable_params(LayerSpec& layer) {
  return std::visit(overloaded{
                        [](Conv2d& c) -> std::vector<std::span<double>> { return {c.weight, c.bias}; },
                        [](Dense& d) -> std::vector<std::span<double>> { return {d.weight, d.bias}; },
                        [](BatchNorm& b) -> std::vector<std::span<double>> { return {b.gamma, b.beta}; },
                        [](auto&) -> std::vector<std::span<double>> { return {}; },
                    },
                    layer);
}

std::vector<std::span<const double>> trainable_params(const LayerSpec& layer) {
  auto spans = trainable_params(const_cast<LayerSpec&>(layer));
  return {spans.begin(), spans.end()};
}

std::vector<std::span<double>> stored_tensors(LayerSpec& layer) {
  if (auto* b = std::get_if<BatchNorm>(&layer)) return {b->gamma, b->beta, b->mean, b->var};
  return trainable_params(layer);
}

std::vector<std::span<const double>> stored_tensors(const LayerSpec& layer) {
  auto spans = stored_tensors(const_cast<LayerSpec&>(layer));
  return {spans.begin(), spans.end()};
}

std::size_t stored_count(const LayerSpec& layer) {
  std::size_t n = 0;
  for (auto s : stored_tensors(layer)) n += s.size();
  return n;
}

Tensor forward_layer(const LayerSpec& layer, const Tensor& in) {
  Tensor out(output_shape(layer, in.shape));
  std::visit(
      overloaded{
          [&](const Conv2d& c) {
            const std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
            const std::size_t Ho = out.shape[1], Wo = out.shape[2], k = c.kernel;
            for (std::size_t o = 0; o < c.out_channels; ++o) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  double acc = c.bias[o];
                  for (std::size_t ch = 0; ch < C; ++ch) {
                    const double* w = &c.weight[(o * C + ch) * k * k];
                    for (std::size_t ky = 0; ky < k; ++ky) {
                      const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
                      if (iy < 0 || iy >= static_cast<long>(H)) continue;
                      const double* row = &in.data[(ch * H + iy) * W];
                      for (std::size_t kx = 0; kx < k; ++kx) {
                        const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.padding);
                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                        acc += w[ky * k + kx] * row[ix];
                      }
                    }
                  }
                  out.data[(o * Ho + oy) * Wo + ox] = acc;
                }
              }
            }
          },
          [&](const Dense& d) {
            for (std::size_t o = 0; o < d.out_features; ++o) {
              const double* w = &d.weight[o * d.in_features];
              double acc = d.bias[o];
              for (std::size_t i = 0; i < d.in_features; ++i) acc += w[i] * in.data[i];
              out.data[o] = acc;
            }
          },
          [&](const ReLU&) {
            for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
          },
          [&](const PolyAct& p) {
            for (std::size_t i = 0; i < in.size(); ++i) {
              const double x = in.data[i];
              out.data[i] = (p.c2 * x + p.c1) * x + p.c0;
            }
          },
          [&](const AvgPool& p) {
            const std::size_t H = in.shape[1], W = in.shape[2], Ho = out.shape[1], Wo = out.shape[2];
            const double inv = 1.0 / static_cast<double>(p.window * p.window);
            for (std::size_t ch = 0; ch < in.shape[0]; ++ch) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  double acc = 0.0;
                  for (std::size_t dy = 0; dy < p.window; ++dy) {
                    for (std::size_t dx = 0; dx < p.window; ++dx) {
                      acc += in.data[(ch * H + oy * p.window + dy) * W + ox * p.window + dx];
                    }
                  }
                  out.data[(ch * Ho + oy) * Wo + ox] = acc * inv;
                }
              }
            }
          },
          [&](const MaxPool& p) {
            const std::size_t H = in.shape[1], W = in.shape[2], Ho = out.shape[1], Wo = out.shape[2];
            for (std::size_t ch = 0; ch < in.shape[0]; ++ch) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  double best = -std::numeric_limits<double>::infinity();
                  for (std::size_t dy = 0; dy < p.window; ++dy) {
                    for (std::size_t dx = 0; dx < p.window; ++dx) {
                      best = std::max(best, in.data[(ch * H + oy * p.window + dy) * W + ox * p.window + dx]);
                    }
                  }
                  out.data[(ch * Ho + oy) * Wo + ox] = best;
                }
              }
            }
          },
          [&](const BatchNorm& b) {
            const std::size_t inner = bn_inner(in.shape);
            for (std::size_t ch = 0; ch < b.channels; ++ch) {
              const double a = b.gamma[ch] / std::sqrt(b.var[ch] + b.eps);
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = ch * inner + i;
                out.data[idx] = a * (in.data[idx] - b.mean[ch]) + b.beta[ch];
              }
            }
          },
          [&](const Flatten&) { out.data = in.data; },
      },
      layer);
  return out;
}

Tensor backward_layer(const LayerSpec& layer, const Tensor& in, const Tensor& grad_out,
                      std::vector<std::vector<double>>* param_grads) {
  Tensor gin(in.shape);
  std::visit(
      overloaded{
          [&](const Conv2d& c) {
            const std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
            const std::size_t Ho = grad_out.shape[1], Wo = grad_out.shape[2], k = c.kernel;
            double* gw = param_grads ? (*param_grads)[0].data() : nullptr;
            double* gb = param_grads ? (*param_grads)[1].data() : nullptr;
            for (std::size_t o = 0; o < c.out_channels; ++o) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const double g = grad_out.data[(o * Ho + oy) * Wo + ox];
                  if (gb) gb[o] += g;
                  if (g == 0.0) continue;
                  for (std::size_t ch = 0; ch < C; ++ch) {
                    const std::size_t wbase = (o * C + ch) * k * k;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                      const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
                      if (iy < 0 || iy >= static_cast<long>(H)) continue;
                      const std::size_t rbase = (ch * H + iy) * W;
                      for (std::size_t kx = 0; kx < k; ++kx) {
                        const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.padding);
                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                        if (gw) gw[wbase + ky * k + kx] += g * in.data[rbase + ix];
                        gin.data[rbase + ix] += g * c.weight[wbase + ky * k + kx];
                      }
                    }
                  }
                }
              }
            }
          },
          [&](const Dense& d) {
            double* gw = param_grads ? (*param_grads)[0].data() : nullptr;
            double* gb = param_grads ? (*param_grads)[1].data() : nullptr;
            for (std::size_t o = 0; o < d.out_features; ++o) {
              const double g = grad_out.data[o];
              if (gb) gb[o] += g;
              if (g == 0.0) continue;
              const double* w = &d.weight[o * d.in_features];
              for (std::size_t i = 0; i < d.in_features; ++i) {
                if (gw) gw[o * d.in_features + i] += g * in.data[i];
                gin.data[i] += g * w[i];
              }
            }
          },
          [&](const ReLU&) {
            for (std::size_t i = 0; i < in.size(); ++i) gin.data[i] = in.data[i] > 0.0 ? grad_out.data[i] : 0.0;
          },
          [&](const PolyAct& p) {
            for (std::size_t i = 0; i < in.size(); ++i) {
              gin.data[i] = grad_out.data[i] * (2.0 * p.c2 * in.data[i] + p.c1);
            }
          },
          [&](const AvgPool& p) {
            const std::size_t H = in.shape[1], W = in.shape[2];
            const std::size_t Ho = grad_out.shape[1], Wo = grad_out.shape[2];
            const double inv = 1.0 / static_cast<double>(p.window * p.window);
            for (std::size_t ch = 0; ch < in.shape[0]; ++ch) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const double g = grad_out.data[(ch * Ho + oy) * Wo + ox] * inv;
                  for (std::size_t dy = 0; dy < p.window; ++dy) {
                    for (std::size_t dx = 0; dx < p.window; ++dx) {
                      gin.data[(ch * H + oy * p.window + dy) * W + ox * p.window + dx] += g;
                    }
                  }
                }
              }
            }
          },
          [&](const MaxPool& p) {
            const std::size_t H = in.shape[1], W = in.shape[2];
            const std::size_t Ho = grad_out.shape[1], Wo = grad_out.shape[2];
            for (std::size_t ch = 0; ch < in.shape[0]; ++ch) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  std::size_t best_idx = 0;
                  double best = -std::numeric_limits<double>::infinity();
                  for (std::size_t dy = 0; dy < p.window; ++dy) {
                    for (std::size_t dx = 0; dx < p.window; ++dx) {
                      const std::size_t idx = (ch * H + oy * p.window + dy) * W + ox * p.window + dx;
                      if (in.data[idx] > best) {
                        best = in.data[idx];
                        best_idx = idx;
                      }
                    }
                  }
                  gin.data[best_idx] += grad_out.data[(ch * Ho + oy) * Wo + ox];
                }
              }
            }
          },
          [&](const BatchNorm& b) {
            const std::size_t inner = bn_inner(in.shape);
            for (std::size_t ch = 0; ch < b.channels; ++ch) {
              const double inv_std = 1.0 / std::sqrt(b.var[ch] + b.eps);
              const double a = b.gamma[ch] * inv_std;
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = ch * inner + i;
                const double g = grad_out.data[idx];
                gin.data[idx] = a * g;
                if (param_grads) {
                  (*param_grads)[0][ch] += g * (in.data[idx] - b.mean[ch]) * inv_std;
                  (*param_grads)[1][ch] += g;
                }
              }
            }
          },
          [&](const Flatten&) { gin.data = grad_out.data; },
      },
      layer);
  return gin;
}

}  // namespace splitfhe::nn
