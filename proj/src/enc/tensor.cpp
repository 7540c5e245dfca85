#include "splitfhe/enc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>

#include "splitfhe/error.hpp"

namespace splitfhe::enc {

EncLayerSpec EncLayerSpec::make_conv(const nn::Conv2d& c) {
  EncLayerSpec l;
  l.kind = Kind::Conv2d;
  l.conv = c;
  return l;
}

EncLayerSpec EncLayerSpec::make_dense(std::size_t rows, std::size_t cols, std::vector<double> matrix,
                                      std::vector<double> bias, nn::Shape out_shape) {
  if (matrix.size() != rows * cols) throw ShapeError("dense matrix has wrong size");
  if (!bias.empty() && bias.size() != rows) throw ShapeError("dense bias has wrong size");
  if (out_shape.empty()) out_shape = {rows};
  if (nn::numel(out_shape) != rows) throw ShapeError("dense output shape does not match row count");
  EncLayerSpec l;
  l.kind = Kind::Dense;
  l.rows = rows;
  l.cols = cols;
  l.matrix = std::move(matrix);
  l.bias = std::move(bias);
  l.out_shape = std::move(out_shape);
  return l;
}

EncLayerSpec EncLayerSpec::make_poly(double c0, double c1, double c2) {
  EncLayerSpec l;
  l.kind = Kind::PolyAct;
  l.coeffs = {c0, c1, c2};
  return l;
}

EncLayerSpec EncLayerSpec::make_avgpool(std::size_t window) {
  if (window == 0) throw ShapeError("pool window must be positive");
  EncLayerSpec l;
  l.kind = Kind::AvgPool;
  l.window = window;
  return l;
}

EncLayerSpec EncLayerSpec::make_bias(std::vector<double> bias) {
  EncLayerSpec l;
  l.kind = Kind::BiasAdd;
  l.bias = std::move(bias);
  return l;
}

const char* kind_name(EncLayerSpec::Kind k) {
  switch (k) {
    case EncLayerSpec::Kind::Conv2d: return "conv2d";
    case EncLayerSpec::Kind::Dense: return "dense";
    case EncLayerSpec::Kind::PolyAct: return "polyact";
    case EncLayerSpec::Kind::AvgPool: return "avgpool";
    case EncLayerSpec::Kind::BiasAdd: return "bias_add";
  }
  return "?";
}

std::size_t layer_depth(const EncLayerSpec& l) {
  switch (l.kind) {
    case EncLayerSpec::Kind::Conv2d:
    case EncLayerSpec::Kind::Dense:
      return 1;
    case EncLayerSpec::Kind::AvgPool:
      return l.window == 1 ? 0 : 1;
    case EncLayerSpec::Kind::BiasAdd:
      return 0;
    case EncLayerSpec::Kind::PolyAct: {
      const auto [c0, c1, c2] = l.coeffs;
      (void)c0;
      if (c2 != 0.0 && c2 != 1.0) return 2;
      if (c2 == 1.0) return 1;
      return c1 != 1.0 ? 1 : 0;
    }
  }
  return 0;
}

std::size_t segment_depth(std::span<const EncLayerSpec> layers) {
  std::size_t d = 0;
  for (const auto& l : layers) d += layer_depth(l);
  return d;
}

// ---- layout ----

std::size_t next_pow2(std::size_t v) {
  std::size_t p = 1;
  while (p < v) p <<= 1;
  return p;
}

namespace {

struct ConvGeom {
  std::size_t C, H, W, k, s, pad, Ho, Wo;
};

ConvGeom conv_geom(const nn::Shape& image, const nn::Conv2d& conv) {
  if (image.size() != 3) throw ShapeError("convolution input must be [C,H,W], got " + nn::shape_str(image));
  if (image[0] != conv.in_channels) throw ShapeError("convolution expects " + std::to_string(conv.in_channels) +
                                                     " channels, got " + nn::shape_str(image));
  if (conv.stride == 0 || conv.kernel == 0) throw ShapeError("convolution kernel and stride must be positive");
  ConvGeom g{image[0], image[1], image[2], conv.kernel, conv.stride, conv.padding, 0, 0};
  if (g.H + 2 * g.pad < g.k || g.W + 2 * g.pad < g.k) throw ShapeError("kernel larger than padded input");
  g.Ho = (g.H + 2 * g.pad - g.k) / g.s + 1;
  g.Wo = (g.W + 2 * g.pad - g.k) / g.s + 1;
  return g;
}

std::size_t slot_of(const PackedCiphertextTensor& x, std::size_t i) {
  return x.slot_index.empty() ? i : x.slot_index[i];
}

he::Ciphertext rot(const EncEnv& env, const he::Ciphertext& ct, long steps) {
  if (steps == 0) return ct;
  return env.eval.rotate(ct, steps, env.keys->galois_keys);
}

// Plaintext at scale q_level so that multiply-then-rescale returns to the
// ciphertext's own scale.
he::PlaintextPoly encode_at_prime(const EncEnv& env, std::span<const double> v, std::size_t level) {
  const double q = static_cast<double>(env.ctx->modulus(level).value());
  return env.encoder.encode(v, q, level);
}

std::size_t current_level(const PackedCiphertextTensor& x) {
  if (x.cts.empty()) throw ShapeError("packed tensor holds no ciphertexts");
  return x.cts.front().level;
}

void require_level(const PackedCiphertextTensor& x, std::size_t need, const char* what) {
  const std::size_t have = current_level(x);
  if (have < need) {
    throw DepthError(std::string(what) + " needs " + std::to_string(need) + " level(s) but only " +
                     std::to_string(have) + " remain");
  }
}

// Replicates `v` (already laid out over one period) across `slots`.
std::vector<double> replicate(const std::vector<double>& v, std::size_t period, std::size_t slots) {
  std::vector<double> out(slots, 0.0);
  for (std::size_t i = 0; i < slots; ++i) out[i] = v[i % period];
  return out;
}

}  // namespace

std::size_t im2col_windows(const nn::Shape& image, const nn::Conv2d& conv) {
  const auto g = conv_geom(image, conv);
  return g.Ho * g.Wo;
}

std::size_t im2col_block(const nn::Shape& image, const nn::Conv2d& conv) {
  return next_pow2(im2col_windows(image, conv));
}

std::vector<std::vector<double>> im2col_slots(const nn::Tensor& image, const nn::Conv2d& conv, std::size_t slots) {
  const auto g = conv_geom(image.shape, conv);
  const std::size_t block = next_pow2(g.Ho * g.Wo);
  const std::size_t need = g.k * g.k * block;
  if (need > slots) {
    throw CapacityError("im2col packing needs " + std::to_string(need) + " slots per channel but only " +
                        std::to_string(slots) + " are available");
  }
  std::vector<std::vector<double>> out(g.C, std::vector<double>(slots, 0.0));
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t i = 0; i < g.k; ++i)
      for (std::size_t j = 0; j < g.k; ++j)
        for (std::size_t y = 0; y < g.Ho; ++y)
          for (std::size_t x = 0; x < g.Wo; ++x) {
            const long yy = long(y * g.s + i) - long(g.pad), xx = long(x * g.s + j) - long(g.pad);
            if (yy < 0 || xx < 0 || yy >= long(g.H) || xx >= long(g.W)) continue;
            out[c][(i * g.k + j) * block + y * g.Wo + x] = image.data[(c * g.H + yy) * g.W + xx];
          }
  return out;
}

nn::Tensor im2col_unpack(const std::vector<std::vector<double>>& slots, const nn::Shape& image,
                         const nn::Conv2d& conv) {
  const auto g = conv_geom(image, conv);
  if (slots.size() != g.C) throw ShapeError("im2col unpack expects one slot vector per channel");
  const std::size_t block = next_pow2(g.Ho * g.Wo);
  nn::Tensor out(image);
  std::vector<bool> seen(out.size(), false);
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t i = 0; i < g.k; ++i)
      for (std::size_t j = 0; j < g.k; ++j)
        for (std::size_t y = 0; y < g.Ho; ++y)
          for (std::size_t x = 0; x < g.Wo; ++x) {
            const long yy = long(y * g.s + i) - long(g.pad), xx = long(x * g.s + j) - long(g.pad);
            if (yy < 0 || xx < 0 || yy >= long(g.H) || xx >= long(g.W)) continue;
            const std::size_t idx = (c * g.H + yy) * g.W + xx;
            const std::size_t s = (i * g.k + j) * block + y * g.Wo + x;
            if (s >= slots[c].size()) throw ShapeError("im2col slot vector too short");
            if (!seen[idx]) {
              out.data[idx] = slots[c][s];
              seen[idx] = true;
            }
          }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ShapeError("some pixels are not covered by any convolution window");
  }
  return out;
}

std::vector<double> flat_slots(const nn::Tensor& x, std::size_t period, std::size_t slots) {
  if (period == 0 || (period & (period - 1)) != 0) throw ParameterError("period must be a power of two");
  if (period > slots || slots % period != 0) {
    throw CapacityError("period " + std::to_string(period) + " does not fit in " + std::to_string(slots) + " slots");
  }
  if (x.size() > period) {
    throw CapacityError("tensor of " + std::to_string(x.size()) + " elements exceeds period " +
                        std::to_string(period));
  }
  std::vector<double> one(period, 0.0);
  std::copy(x.data.begin(), x.data.end(), one.begin());
  return replicate(one, period, slots);
}

nn::Tensor unpack_slots(const std::vector<std::vector<double>>& slots, const PackedCiphertextTensor& layout) {
  nn::Tensor out(layout.logical_shape);
  switch (layout.layout) {
    case Layout::Im2ColMatrix:
      throw ShapeError("im2col tensors cannot be unpacked without the convolution geometry");
    case Layout::FlatVector:
      if (slots.size() != 1) throw ShapeError("flat tensor must be a single ciphertext");
      for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = slots[0].at(slot_of(layout, i));
      break;
    case Layout::ChannelPerCiphertext: {
      const std::size_t C = layout.logical_shape.at(0);
      if (slots.size() != C) throw ShapeError("channel tensor needs one ciphertext per channel");
      const std::size_t per = out.size() / C;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < per; ++i) out.data[c * per + i] = slots[c].at(slot_of(layout, i));
      break;
    }
  }
  return out;
}

// ---- client side ----

namespace {

he::Ciphertext encrypt_at(const he::ContextPtr& cptr, const he::Encoder& enc, std::span<const double> v,
                          const he::PublicKey& pk, Prng& rng, std::size_t level) {
  const auto& ctx = *cptr;
  auto ct = he::encrypt(ctx, enc.encode(v, ctx.params().scale), pk, rng);
  if (level == kTopLevel || level >= ct.level) return ct;
  return he::Evaluator(cptr).mod_drop(ct, level);
}

}  // namespace

PackedCiphertextTensor pack_input(const nn::Tensor& image, const nn::Conv2d& first_conv, const he::CkksContext& ctx,
                                  const he::PublicKey& pk, Prng& rng, std::size_t level) {
  const auto rows = im2col_slots(image, first_conv, ctx.slot_count());
  auto cptr = std::shared_ptr<const he::CkksContext>(&ctx, [](const he::CkksContext*) {});
  he::Encoder enc(cptr);
  PackedCiphertextTensor out;
  out.layout = Layout::Im2ColMatrix;
  out.logical_shape = image.shape;
  out.block = im2col_block(image.shape, first_conv);
  for (const auto& r : rows) out.cts.push_back(encrypt_at(cptr, enc, r, pk, rng, level));
  return out;
}

PackedCiphertextTensor pack_flat(const nn::Tensor& x, std::size_t period, const he::CkksContext& ctx,
                                 const he::PublicKey& pk, Prng& rng, std::size_t level) {
  const auto v = flat_slots(x, period, ctx.slot_count());
  auto cptr = std::shared_ptr<const he::CkksContext>(&ctx, [](const he::CkksContext*) {});
  he::Encoder enc(cptr);
  PackedCiphertextTensor out;
  out.layout = Layout::FlatVector;
  out.logical_shape = x.shape;
  out.period = period;
  out.cts.push_back(encrypt_at(cptr, enc, v, pk, rng, level));
  return out;
}

nn::Tensor decrypt_tensor(const PackedCiphertextTensor& x, const he::CkksContext& ctx, const he::SecretKey& sk) {
  auto cptr = std::shared_ptr<const he::CkksContext>(&ctx, [](const he::CkksContext*) {});
  he::Encoder enc(cptr);
  std::vector<std::vector<double>> slots;
  slots.reserve(x.cts.size());
  for (const auto& ct : x.cts) slots.push_back(enc.decode(he::decrypt(ctx, ct, sk)));
  return unpack_slots(slots, x);
}

// ---- kernels ----

PackedCiphertextTensor enc_conv2d(const PackedCiphertextTensor& x, const EncLayerSpec& layer, const EncEnv& env) {
  if (x.layout != Layout::Im2ColMatrix) throw ShapeError("encrypted convolution needs an im2col-packed input");
  const auto& conv = layer.conv;
  const auto g = conv_geom(x.logical_shape, conv);
  if (x.cts.size() != g.C) throw ShapeError("im2col input must hold one ciphertext per channel");
  const std::size_t windows = g.Ho * g.Wo;
  const std::size_t block = x.block ? x.block : next_pow2(windows);
  const std::size_t K = g.k * g.k;
  if (conv.weight.size() != conv.out_channels * g.C * K) throw ShapeError("convolution weight has wrong size");
  require_level(x, 1, "convolution");
  const std::size_t level = current_level(x);
  const std::size_t slots = env.slots();

  // rotated[c][kpos] brings the kpos-th kernel block down to slots [0, block).
  std::vector<std::vector<he::Ciphertext>> rotated(g.C);
  for (std::size_t c = 0; c < g.C; ++c) {
    rotated[c].push_back(x.cts[c]);
    for (std::size_t kp = 1; kp < K; ++kp) rotated[c].push_back(rot(env, rotated[c].back(), long(block)));
  }

  PackedCiphertextTensor out;
  out.layout = Layout::ChannelPerCiphertext;
  out.logical_shape = {conv.out_channels, g.Ho, g.Wo};
  std::vector<double> mask(slots, 0.0);
  for (std::size_t o = 0; o < conv.out_channels; ++o) {
    std::optional<he::Ciphertext> acc;
    for (std::size_t c = 0; c < g.C; ++c)
      for (std::size_t kp = 0; kp < K; ++kp) {
        const double w = conv.weight[(o * g.C + c) * K + kp];
        if (w == 0.0) continue;
        std::fill(mask.begin(), mask.begin() + windows, w);
        auto prod = env.eval.mul_plain(rotated[c][kp], encode_at_prime(env, mask, level));
        if (acc) {
          env.eval.add_inplace(*acc, prod);
        } else {
          acc = std::move(prod);
        }
      }
    if (!acc) {
      std::fill(mask.begin(), mask.end(), 0.0);
      acc = env.eval.mul_plain(x.cts[0], encode_at_prime(env, mask, level));
    }
    auto y = env.eval.rescale(*acc);
    if (!conv.bias.empty() && conv.bias[o] != 0.0) {
      std::vector<double> b(slots, 0.0);
      std::fill(b.begin(), b.begin() + windows, conv.bias[o]);
      y = env.eval.add_plain(y, env.encoder.encode(b, y.scale, y.level));
    }
    out.cts.push_back(std::move(y));
  }
  return out;
}

PackedCiphertextTensor enc_dense(const PackedCiphertextTensor& x, const EncLayerSpec& layer, const EncEnv& env) {
  if (x.layout != Layout::FlatVector || x.cts.size() != 1) throw ShapeError("encrypted dense needs a flat input");
  const std::size_t p = x.period;
  const std::size_t in = nn::numel(x.logical_shape);
  if (in != layer.cols) {
    throw ShapeError("dense expects " + std::to_string(layer.cols) + " inputs, got " + std::to_string(in));
  }
  if (layer.rows > p) {
    throw CapacityError("dense output of " + std::to_string(layer.rows) + " exceeds period " + std::to_string(p));
  }
  require_level(x, 1, "dense");
  const std::size_t level = current_level(x);
  const std::size_t slots = env.slots();

  // Diagonal d holds M[i][(i + d) mod p] where column j of the weight matrix
  // sits at the input's slot for element j.
  std::map<std::size_t, std::vector<double>> diags;
  for (std::size_t i = 0; i < layer.rows; ++i)
    for (std::size_t j = 0; j < layer.cols; ++j) {
      const double w = layer.matrix[i * layer.cols + j];
      if (w == 0.0) continue;
      const std::size_t s = slot_of(x, j);
      if (s >= p) throw CapacityError("input slot outside the packing period");
      const std::size_t d = (s + p - i) % p;
      auto& v = diags[d];
      if (v.empty()) v.assign(p, 0.0);
      v[i] = w;
    }

  const std::size_t g = next_pow2(static_cast<std::size_t>(std::ceil(std::sqrt(double(p)))));
  std::map<std::size_t, he::Ciphertext> baby;  // rot(x, b)
  auto baby_rot = [&](std::size_t b) -> const he::Ciphertext& {
    auto it = baby.find(b);
    if (it != baby.end()) return it->second;
    return baby.emplace(b, rot(env, x.cts[0], long(b))).first->second;
  };

  std::optional<he::Ciphertext> total;
  std::map<std::size_t, std::vector<std::size_t>> by_giant;
  for (const auto& [d, v] : diags) by_giant[d / g].push_back(d);
  for (const auto& [k, ds] : by_giant) {
    const std::size_t shift = k * g;
    std::optional<he::Ciphertext> inner;
    for (std::size_t d : ds) {
      const auto& diag = diags[d];
      std::vector<double> one(p);
      for (std::size_t s = 0; s < p; ++s) one[s] = diag[(s + p - shift) % p];
      auto prod = env.eval.mul_plain(baby_rot(d - shift), encode_at_prime(env, replicate(one, p, slots), level));
      if (inner) {
        env.eval.add_inplace(*inner, prod);
      } else {
        inner = std::move(prod);
      }
    }
    auto part = rot(env, *inner, long(shift));
    if (total) {
      env.eval.add_inplace(*total, part);
    } else {
      total = std::move(part);
    }
  }
  if (!total) {
    total = env.eval.mul_plain(x.cts[0], encode_at_prime(env, std::vector<double>(slots, 0.0), level));
  }
  auto y = env.eval.rescale(*total);
  if (!layer.bias.empty()) {
    std::vector<double> b(p, 0.0);
    std::copy(layer.bias.begin(), layer.bias.end(), b.begin());
    y = env.eval.add_plain(y, env.encoder.encode(replicate(b, p, slots), y.scale, y.level));
  }
  PackedCiphertextTensor out;
  out.layout = Layout::FlatVector;
  out.period = p;
  out.logical_shape = layer.out_shape.empty() ? nn::Shape{layer.rows} : layer.out_shape;
  out.cts.push_back(std::move(y));
  return out;
}

PackedCiphertextTensor enc_poly_act(const PackedCiphertextTensor& x, const std::array<double, 3>& coeffs,
                                    const EncEnv& env) {
  const auto [c0, c1, c2] = coeffs;
  require_level(x, layer_depth(EncLayerSpec::make_poly(c0, c1, c2)), "polynomial activation");
  auto add_const = [&](he::Ciphertext ct, double c) {
    if (c == 0.0) return ct;
    return env.eval.add_plain(ct, env.encoder.encode_constant(c, ct.scale, ct.level));
  };
  auto mul_const = [&](const he::Ciphertext& ct, double c) {
    const double q = static_cast<double>(env.ctx->modulus(ct.level).value());
    return env.eval.rescale(env.eval.mul_plain(ct, env.encoder.encode_constant(c, q, ct.level)));
  };

  PackedCiphertextTensor out = x;
  for (auto& ct : out.cts) {
    if (c2 != 0.0) {
      // (c2 x + c1) x + c0
      he::Ciphertext u = c2 == 1.0 ? ct : mul_const(ct, c2);
      u = add_const(std::move(u), c1);
      const he::Ciphertext xs = u.level == ct.level ? ct : env.eval.mod_drop(ct, u.level);
      ct = add_const(env.eval.rescale(env.eval.mul(u, xs, env.keys->relin_key)), c0);
    } else if (c1 != 1.0) {
      ct = add_const(mul_const(ct, c1), c0);
    } else {
      ct = add_const(std::move(ct), c0);
    }
  }
  return out;
}

PackedCiphertextTensor enc_avgpool(const PackedCiphertextTensor& x, std::size_t w, const EncEnv& env) {
  if (w == 0) throw ShapeError("pool window must be positive");
  if (x.layout == Layout::Im2ColMatrix) throw ShapeError("pooling is not defined on im2col-packed tensors");
  if (x.logical_shape.size() != 3) throw ShapeError("pooling needs a [C,H,W] tensor, got " + nn::shape_str(x.logical_shape));
  const std::size_t C = x.logical_shape[0], H = x.logical_shape[1], W = x.logical_shape[2];
  if (H % w || W % w) throw ShapeError("pool window does not divide " + nn::shape_str(x.logical_shape));
  if (w == 1) return x;
  if (!x.slot_index.empty()) throw ShapeError("pooling needs a contiguous input layout");
  require_level(x, 1, "average pooling");
  const std::size_t Ho = H / w, Wo = W / w;
  const std::size_t slots = env.slots();
  const bool flat = x.layout == Layout::FlatVector;

  PackedCiphertextTensor out;
  out.layout = x.layout;
  out.period = x.period;
  out.logical_shape = {C, Ho, Wo};
  const std::size_t chans = flat ? C : 1;
  for (std::size_t c = 0; c < chans; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) out.slot_index.push_back(c * H * W + oy * w * W + ox * w);

  std::vector<double> mask(flat ? x.period : slots, 0.0);
  const double inv = 1.0 / double(w * w);
  for (std::size_t s : out.slot_index) mask[s] = inv;
  if (flat) mask = replicate(mask, x.period, slots);

  out.cts.clear();
  for (const auto& ct : x.cts) {
    he::Ciphertext rows = ct, t = ct;
    for (std::size_t dx = 1; dx < w; ++dx) {
      t = rot(env, t, 1);
      env.eval.add_inplace(rows, t);
    }
    he::Ciphertext sum = rows;
    t = rows;
    for (std::size_t dy = 1; dy < w; ++dy) {
      t = rot(env, t, long(W));
      env.eval.add_inplace(sum, t);
    }
    out.cts.push_back(env.eval.rescale(env.eval.mul_plain(sum, encode_at_prime(env, mask, sum.level))));
  }
  return out;
}

PackedCiphertextTensor enc_bias_add(const PackedCiphertextTensor& x, const EncLayerSpec& layer, const EncEnv& env) {
  if (x.layout == Layout::Im2ColMatrix) throw ShapeError("bias add is not defined on im2col-packed tensors");
  const std::size_t n = nn::numel(x.logical_shape);
  if (layer.bias.size() != n) throw ShapeError("bias length does not match the tensor");
  const std::size_t slots = env.slots();
  PackedCiphertextTensor out = x;
  if (x.layout == Layout::FlatVector) {
    std::vector<double> b(x.period, 0.0);
    for (std::size_t i = 0; i < n; ++i) b.at(slot_of(x, i)) = layer.bias[i];
    auto& ct = out.cts[0];
    ct = env.eval.add_plain(ct, env.encoder.encode(replicate(b, x.period, slots), ct.scale, ct.level));
  } else {
    const std::size_t C = x.logical_shape[0], per = n / C;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> b(slots, 0.0);
      for (std::size_t i = 0; i < per; ++i) b.at(slot_of(x, i)) = layer.bias[c * per + i];
      auto& ct = out.cts[c];
      ct = env.eval.add_plain(ct, env.encoder.encode(b, ct.scale, ct.level));
    }
  }
  return out;
}

PackedCiphertextTensor eval_encrypted_segment(const PackedCiphertextTensor& x, std::span<const EncLayerSpec> layers,
                                              const EncEnv& env) {
  PackedCiphertextTensor cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::size_t need = layer_depth(l);
    const std::size_t have = current_level(cur);
    if (need > have) {
      throw DepthError("layer " + std::to_string(i) + " (" + kind_name(l.kind) + ") needs " + std::to_string(need) +
                       " level(s) but only " + std::to_string(have) + " remain");
    }
    switch (l.kind) {
      case EncLayerSpec::Kind::Conv2d: cur = enc_conv2d(cur, l, env); break;
      case EncLayerSpec::Kind::Dense: cur = enc_dense(cur, l, env); break;
      case EncLayerSpec::Kind::PolyAct: cur = enc_poly_act(cur, l.coeffs, env); break;
      case EncLayerSpec::Kind::AvgPool: cur = enc_avgpool(cur, l.window, env); break;
      case EncLayerSpec::Kind::BiasAdd: cur = enc_bias_add(cur, l, env); break;
    }
  }
  return cur;
}

// ---- lowering ----

namespace {

EncLayerSpec toeplitz(const nn::Conv2d& c, const nn::Shape& in) {
  const auto g = conv_geom(in, c);
  const std::size_t rows = c.out_channels * g.Ho * g.Wo, cols = g.C * g.H * g.W;
  std::vector<double> m(rows * cols, 0.0), b(rows, 0.0);
  for (std::size_t o = 0; o < c.out_channels; ++o)
    for (std::size_t y = 0; y < g.Ho; ++y)
      for (std::size_t x = 0; x < g.Wo; ++x) {
        const std::size_t r = (o * g.Ho + y) * g.Wo + x;
        b[r] = c.bias.empty() ? 0.0 : c.bias[o];
        for (std::size_t ci = 0; ci < g.C; ++ci)
          for (std::size_t i = 0; i < g.k; ++i)
            for (std::size_t j = 0; j < g.k; ++j) {
              const long yy = long(y * g.s + i) - long(g.pad), xx = long(x * g.s + j) - long(g.pad);
              if (yy < 0 || xx < 0 || yy >= long(g.H) || xx >= long(g.W)) continue;
              m[r * cols + (ci * g.H + yy) * g.W + xx] += c.weight[((o * g.C + ci) * g.k + i) * g.k + j];
            }
      }
  return EncLayerSpec::make_dense(rows, cols, std::move(m), std::move(b), {c.out_channels, g.Ho, g.Wo});
}

EncLayerSpec pool_matrix(std::size_t w, const nn::Shape& in) {
  const std::size_t C = in[0], H = in[1], W = in[2], Ho = H / w, Wo = W / w;
  const std::size_t rows = C * Ho * Wo, cols = C * H * W;
  std::vector<double> m(rows * cols, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x)
        for (std::size_t i = 0; i < w; ++i)
          for (std::size_t j = 0; j < w; ++j)
            m[((c * Ho + y) * Wo + x) * cols + (c * H + y * w + i) * W + x * w + j] = 1.0 / double(w * w);
  return EncLayerSpec::make_dense(rows, cols, std::move(m), {}, {C, Ho, Wo});
}

}  // namespace

std::vector<EncLayerSpec> lower_model(const nn::Model& m, bool leading_conv) {
  std::vector<EncLayerSpec> out;
  nn::Shape shape = m.input_shape;
  bool contiguous = true;  // false after a native pool until the next dense
  bool channel_layout = false;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& layer = m.layers[i];
    const nn::Shape next = nn::output_shape(layer, shape);
    const std::string where = "layer " + std::to_string(i) + " (" + nn::kind_name(layer) + ")";
    auto need_flat = [&] {
      if (channel_layout) {
        throw SplitError(where + " cannot follow an encrypted im2col convolution; only element-wise layers may");
      }
    };
    if (const auto* c = std::get_if<nn::Conv2d>(&layer)) {
      if (i == 0 && leading_conv) {
        out.push_back(EncLayerSpec::make_conv(*c));
        channel_layout = true;
      } else {
        need_flat();
        out.push_back(toeplitz(*c, shape));
      }
      contiguous = true;
    } else if (const auto* d = std::get_if<nn::Dense>(&layer)) {
      need_flat();
      out.push_back(EncLayerSpec::make_dense(d->out_features, d->in_features, d->weight, d->bias));
      contiguous = true;
    } else if (const auto* p = std::get_if<nn::PolyAct>(&layer)) {
      out.push_back(EncLayerSpec::make_poly(p->c0, p->c1, p->c2));
    } else if (const auto* a = std::get_if<nn::AvgPool>(&layer)) {
      if (contiguous) {
        out.push_back(EncLayerSpec::make_avgpool(a->window));
        contiguous = a->window == 1;
      } else {
        need_flat();
        out.push_back(pool_matrix(a->window, shape));
        contiguous = true;
      }
    } else if (const auto* b = std::get_if<nn::BatchNorm>(&layer)) {
      need_flat();
      const std::size_t n = nn::numel(shape), per = n / b->channels;
      std::vector<double> mat(n * n, 0.0), bias(n);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t c = k / per;
        const double a = b->gamma[c] / std::sqrt(b->var[c] + b->eps);
        mat[k * n + k] = a;
        bias[k] = b->beta[c] - a * b->mean[c];
      }
      out.push_back(EncLayerSpec::make_dense(n, n, std::move(mat), std::move(bias), shape));
      contiguous = true;
    } else if (std::holds_alternative<nn::Flatten>(layer)) {
      if (channel_layout) throw SplitError(where + " cannot follow an encrypted im2col convolution");
      // A flat layout already is the flattened tensor; a following dense
      // reads it through the current slot mapping.
    } else {
      throw SplitError(where + " has no encrypted form; substitute it before deployment");
    }
    shape = next;
  }
  return out;
}

std::size_t segment_period(std::span<const EncLayerSpec> layers, const nn::Shape& input_shape) {
  std::size_t biggest = nn::numel(input_shape);
  for (const auto& l : layers) {
    if (l.kind == EncLayerSpec::Kind::Dense) biggest = std::max({biggest, l.rows, l.cols});
  }
  return next_pow2(std::max<std::size_t>(biggest, 1));
}

nn::Tensor eval_plain_segment(const nn::Tensor& x, std::span<const EncLayerSpec> layers) {
  nn::Tensor cur = x;
  for (const auto& l : layers) {
    switch (l.kind) {
      case EncLayerSpec::Kind::Conv2d:
        cur = nn::forward_layer(l.conv, cur);
        break;
      case EncLayerSpec::Kind::Dense: {
        if (cur.size() != l.cols) throw ShapeError("dense input size mismatch");
        nn::Tensor y(l.out_shape.empty() ? nn::Shape{l.rows} : l.out_shape);
        for (std::size_t i = 0; i < l.rows; ++i) {
          double s = l.bias.empty() ? 0.0 : l.bias[i];
          for (std::size_t j = 0; j < l.cols; ++j) s += l.matrix[i * l.cols + j] * cur.data[j];
          y.data[i] = s;
        }
        cur = std::move(y);
        break;
      }
      case EncLayerSpec::Kind::PolyAct:
        for (auto& v : cur.data) v = l.coeffs[2] * v * v + l.coeffs[1] * v + l.coeffs[0];
        break;
      case EncLayerSpec::Kind::AvgPool:
        cur = nn::forward_layer(nn::AvgPool{l.window}, cur);
        break;
      case EncLayerSpec::Kind::BiasAdd:
        if (l.bias.size() != cur.size()) throw ShapeError("bias length does not match the tensor");
        for (std::size_t i = 0; i < cur.size(); ++i) cur.data[i] += l.bias[i];
        break;
    }
  }
  return cur;
}

}  // namespace splitfhe::enc
