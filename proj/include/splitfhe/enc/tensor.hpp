#pragma once

#include <array>
#include <span>
#include <vector>

#include "splitfhe/he/ckks.hpp"
#include "splitfhe/nn/layers.hpp"
#include "splitfhe/nn/model.hpp"

namespace splitfhe::enc {

// Slot layouts:
//   Im2ColMatrix          one ciphertext per input channel; slot kpos * block + w
//                         holds the kpos-th element of sliding window w
//                         (block = next power of two >= window count).
//   ChannelPerCiphertext  one ciphertext per channel; slot i holds element i of
//                         that channel (row-major), remaining slots are zero.
//   FlatVector            one ciphertext; the flattened tensor is repeated with
//                         period `period` across all slots.
// When slot_index is non-empty, logical element i lives at slot slot_index[i]
// (per channel for ChannelPerCiphertext); otherwise element i is at slot i.
enum class Layout { Im2ColMatrix, FlatVector, ChannelPerCiphertext };

struct PackedCiphertextTensor {
  std::vector<he::Ciphertext> cts;
  nn::Shape logical_shape;
  Layout layout = Layout::FlatVector;
  std::size_t block = 0;   // Im2ColMatrix only
  std::size_t period = 0;  // FlatVector only
  std::vector<std::size_t> slot_index;
};

struct EncLayerSpec {
  enum class Kind { Conv2d, Dense, PolyAct, AvgPool, BiasAdd };
  Kind kind = Kind::Dense;

  nn::Conv2d conv;  // Conv2d (bias included)

  // Dense: rows x cols row-major matrix plus bias of length rows.
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> matrix;
  std::vector<double> bias;  // also used by BiasAdd (one value per logical element)
  nn::Shape out_shape;       // Dense: logical output shape (defaults to {rows})

  std::array<double, 3> coeffs{0.0, 0.0, 1.0};  // PolyAct: c0, c1, c2
  std::size_t window = 1;                       // AvgPool

  static EncLayerSpec make_conv(const nn::Conv2d& c);
  static EncLayerSpec make_dense(std::size_t rows, std::size_t cols, std::vector<double> matrix,
                                 std::vector<double> bias, nn::Shape out_shape = {});
  static EncLayerSpec make_poly(double c0, double c1, double c2);
  static EncLayerSpec make_avgpool(std::size_t window);
  static EncLayerSpec make_bias(std::vector<double> bias);
};

const char* kind_name(EncLayerSpec::Kind k);

// Multiplicative levels a layer consumes.
std::size_t layer_depth(const EncLayerSpec& l);
std::size_t segment_depth(std::span<const EncLayerSpec> layers);

// Everything a server-side kernel needs: parameters, codec, evaluator and
// the client's public evaluation keys.
struct EncEnv {
  he::ContextPtr ctx;
  he::Encoder encoder;
  he::Evaluator eval;
  std::shared_ptr<const he::EvaluationKeys> keys;

  EncEnv(he::ContextPtr c, std::shared_ptr<const he::EvaluationKeys> k)
      : ctx(c), encoder(c), eval(c), keys(std::move(k)) {}
  std::size_t slots() const { return ctx->slot_count(); }
};

// ---- plaintext layout logic (no encryption) ----

std::size_t next_pow2(std::size_t v);
std::size_t im2col_windows(const nn::Shape& image, const nn::Conv2d& conv);
std::size_t im2col_block(const nn::Shape& image, const nn::Conv2d& conv);
// One slot vector per input channel. Throws CapacityError when k*k*block exceeds `slots`.
std::vector<std::vector<double>> im2col_slots(const nn::Tensor& image, const nn::Conv2d& conv, std::size_t slots);
// Rebuilds the image from its im2col slots; every pixel must be covered by some window.
nn::Tensor im2col_unpack(const std::vector<std::vector<double>>& slots, const nn::Shape& image,
                         const nn::Conv2d& conv);

std::vector<double> flat_slots(const nn::Tensor& x, std::size_t period, std::size_t slots);
// Reads the logical tensor back out of decoded slot vectors for any layout
// except Im2ColMatrix.
nn::Tensor unpack_slots(const std::vector<std::vector<double>>& slots, const PackedCiphertextTensor& layout);

// ---- client side ----

// Ciphertexts are encrypted at the top level and then trimmed to `level`
// primes above the base, so a segment of depth d can be sent at level d.
inline constexpr std::size_t kTopLevel = static_cast<std::size_t>(-1);
PackedCiphertextTensor pack_input(const nn::Tensor& image, const nn::Conv2d& first_conv, const he::CkksContext& ctx,
                                  const he::PublicKey& pk, Prng& rng, std::size_t level = kTopLevel);
PackedCiphertextTensor pack_flat(const nn::Tensor& x, std::size_t period, const he::CkksContext& ctx,
                                 const he::PublicKey& pk, Prng& rng, std::size_t level = kTopLevel);
nn::Tensor decrypt_tensor(const PackedCiphertextTensor& x, const he::CkksContext& ctx, const he::SecretKey& sk);

// ---- server side kernels ----

PackedCiphertextTensor enc_conv2d(const PackedCiphertextTensor& x, const EncLayerSpec& layer, const EncEnv& env);
PackedCiphertextTensor enc_dense(const PackedCiphertextTensor& x, const EncLayerSpec& layer, const EncEnv& env);
PackedCiphertextTensor enc_poly_act(const PackedCiphertextTensor& x, const std::array<double, 3>& coeffs,
                                    const EncEnv& env);
PackedCiphertextTensor enc_avgpool(const PackedCiphertextTensor& x, std::size_t window, const EncEnv& env);
PackedCiphertextTensor enc_bias_add(const PackedCiphertextTensor& x, const EncLayerSpec& layer, const EncEnv& env);

// Applies the layers in order. A layer that needs more levels than remain
// raises DepthError naming its index.
PackedCiphertextTensor eval_encrypted_segment(const PackedCiphertextTensor& x, std::span<const EncLayerSpec> layers,
                                              const EncEnv& env);

// ---- lowering from plaintext models ----

// Lowers an encryption-ready model (no ReLU / MaxPool) to encrypted layers:
// Dense and PolyAct map directly, Conv2d becomes a Toeplitz Dense, BatchNorm
// becomes a diagonal Dense, AvgPool stays, Flatten disappears. When
// `leading_conv` is set and the first layer is a Conv2d it is kept as an
// im2col convolution (the Model 1 path). Throws SplitError for layers that
// cannot run under encryption.
std::vector<EncLayerSpec> lower_model(const nn::Model& m, bool leading_conv);

// Smallest power-of-two period that holds every intermediate vector of a
// flat-layout segment.
std::size_t segment_period(std::span<const EncLayerSpec> layers, const nn::Shape& input_shape);

// Plaintext evaluation of lowered layers, used as the reference for the
// encrypted path.
nn::Tensor eval_plain_segment(const nn::Tensor& x, std::span<const EncLayerSpec> layers);

}  // namespace splitfhe::enc
