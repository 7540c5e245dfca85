#include <gtest/gtest.h>

#include <cmath>

#include "../common/oracles.hpp"
#include "splitfhe/enc/tensor.hpp"
#include "splitfhe/error.hpp"

using namespace splitfhe;
using namespace splitfhe::enc;

namespace {

struct Env {
  he::ContextPtr ctx;
  he::KeyMaterial keys;
  EncEnv env;

  explicit Env(const he::CkksParams& p, std::uint64_t seed = 3)
      : ctx(he::make_context(p)), keys(he::keygen(*ctx, seed)), env(ctx, keys.public_keys) {}

  PackedCiphertextTensor image(const nn::Tensor& x, const nn::Conv2d& c, Prng& rng) const {
    return pack_input(x, c, *ctx, keys.public_keys->public_key, rng);
  }
  PackedCiphertextTensor flat(const nn::Tensor& x, std::size_t period, Prng& rng) const {
    return pack_flat(x, period, *ctx, keys.public_keys->public_key, rng);
  }
  nn::Tensor open(const PackedCiphertextTensor& x) const { return decrypt_tensor(x, *ctx, keys.secret_key); }
};

const Env& desk() {
  static const Env e(he::CkksParams::desk());
  return e;
}

double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

nn::Tensor random_tensor(const nn::Shape& s, Prng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(s);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

nn::Conv2d conv_of(std::size_t C, std::size_t O, std::size_t k, std::size_t stride, std::size_t pad) {
  nn::Conv2d c;
  c.in_channels = C;
  c.out_channels = O;
  c.kernel = k;
  c.stride = stride;
  c.padding = pad;
  c.weight.assign(O * C * k * k, 0.0);
  c.bias.assign(O, 0.0);
  return c;
}

// Window sums computed straight from the definition.
std::vector<double> naive_avgpool(const nn::Tensor& x, std::size_t w) {
  const std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
  std::vector<double> out;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H / w; ++y)
      for (std::size_t z = 0; z < W / w; ++z) {
        double s = 0.0;
        for (std::size_t i = 0; i < w; ++i)
          for (std::size_t j = 0; j < w; ++j) s += x.data[(c * H + y * w + i) * W + z * w + j];
        out.push_back(s / double(w * w));
      }
  return out;
}

std::vector<double> naive_matvec(const std::vector<double>& m, const std::vector<double>& b, std::size_t rows,
                                 const std::vector<double>& x) {
  std::vector<double> y(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = b.empty() ? 0.0 : b[i];
    for (std::size_t j = 0; j < x.size(); ++j) s += m[i * x.size() + j] * x[j];
    y[i] = s;
  }
  return y;
}

}  // namespace

// ---- layout logic ----

TEST(Im2col, SmallImageFitsOneCiphertext) {
  nn::Tensor img({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto c = conv_of(1, 1, 2, 1, 0);
  const auto slots = im2col_slots(img, c, 2048);
  ASSERT_EQ(slots.size(), 1u);
  EXPECT_EQ(im2col_block(img.shape, c), 4u);
  // kpos-major: kernel (0,0) sees windows 1,2,4,5; (0,1) sees 2,3,5,6 ...
  const std::vector<double> want{1, 2, 4, 5, 2, 3, 5, 6, 4, 5, 7, 8, 5, 6, 8, 9};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(slots[0][i], want[i]);
  for (std::size_t i = 16; i < 2048; ++i) EXPECT_EQ(slots[0][i], 0.0);
}

TEST(Im2col, ZeroImageGivesZeroSlots) {
  nn::Tensor img({2, 4, 4});
  for (const auto& s : im2col_slots(img, conv_of(2, 1, 3, 1, 1), 2048))
    for (double v : s) EXPECT_EQ(v, 0.0);
}

TEST(Im2col, CifarCapacity) {
  nn::Tensor img({3, 32, 32});
  const auto c = conv_of(3, 16, 3, 1, 1);
  EXPECT_EQ(im2col_windows(img.shape, c), 1024u);
  EXPECT_NO_THROW(im2col_slots(img, c, 16384));
  EXPECT_THROW(im2col_slots(img, c, 2048), CapacityError);
}

TEST(Packing, Bijective) {
  Prng rng(11);
  for (int t = 0; t < 30; ++t) {
    const std::size_t C = 1 + rng.uniform_below(3), k = 1 + rng.uniform_below(3);
    const std::size_t stride = 1 + rng.uniform_below(std::min<std::size_t>(k, 2));
    // sizes chosen so the last window ends on the last pixel
    const std::size_t H = k + stride * rng.uniform_below(3), W = k + stride * rng.uniform_below(3);
    const auto c = conv_of(C, 1, k, stride, 0);
    const auto img = random_tensor({C, H, W}, rng);
    EXPECT_EQ(im2col_unpack(im2col_slots(img, c, 4096), img.shape, c), img);

    const auto x = random_tensor({C, H, W}, rng);
    const std::size_t p = next_pow2(x.size());
    PackedCiphertextTensor layout;
    layout.layout = Layout::FlatVector;
    layout.logical_shape = x.shape;
    layout.period = p;
    EXPECT_EQ(unpack_slots({flat_slots(x, p, 2048)}, layout), x);
  }
}

TEST(Packing, FlatRejectsOversize) {
  nn::Tensor x({5});
  EXPECT_THROW(flat_slots(x, 4, 2048), CapacityError);
  EXPECT_THROW(flat_slots(x, 4096, 2048), CapacityError);
  EXPECT_THROW(flat_slots(x, 6, 2048), ParameterError);
}

TEST(Depth, SegmentDepthIsSumOfLayers) {
  Prng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<EncLayerSpec> layers;
    std::size_t want = 0;
    const std::size_t n = rng.uniform_below(6);
    for (std::size_t i = 0; i < n; ++i) {
      switch (rng.uniform_below(4)) {
        case 0:
          layers.push_back(EncLayerSpec::make_dense(1, 1, {1.0}, {}));
          want += 1;
          break;
        case 1: {
          const double c2s[] = {0.0, 1.0, 0.3};
          const double c1s[] = {1.0, 0.5};
          const double c2 = c2s[rng.uniform_below(3)], c1 = c1s[rng.uniform_below(2)];
          layers.push_back(EncLayerSpec::make_poly(0.1, c1, c2));
          want += c2 == 0.3 ? 2 : (c2 == 1.0 ? 1 : (c1 == 1.0 ? 0 : 1));
          break;
        }
        case 2:
          layers.push_back(EncLayerSpec::make_avgpool(2));
          want += 1;
          break;
        default:
          layers.push_back(EncLayerSpec::make_bias({1.0}));
      }
    }
    EXPECT_EQ(segment_depth(layers), want);
  }
}

// ---- convolution ----

TEST(EncConv, OnesKernelSumsWindows) {
  const auto& e = desk();
  Prng rng(1);
  auto c = conv_of(1, 1, 2, 1, 0);
  std::fill(c.weight.begin(), c.weight.end(), 1.0);
  nn::Tensor img({1, 3, 3}, std::vector<double>(9, 1.0));
  const auto y = enc_conv2d(e.image(img, c, rng), EncLayerSpec::make_conv(c), e.env);
  EXPECT_EQ(y.layout, Layout::ChannelPerCiphertext);
  EXPECT_EQ(y.cts[0].level, e.ctx->max_level() - 1);
  const auto out = e.open(y);
  EXPECT_EQ(out.shape, (nn::Shape{1, 2, 2}));
  for (double v : out.data) EXPECT_NEAR(v, 4.0, 1e-3);
}

TEST(EncConv, IdentityKernel) {
  const auto& e = desk();
  Prng rng(2);
  auto c = conv_of(1, 1, 1, 1, 0);
  c.weight[0] = 1.0;
  const auto img = random_tensor({1, 4, 4}, rng);
  const auto out = e.open(enc_conv2d(e.image(img, c, rng), EncLayerSpec::make_conv(c), e.env));
  EXPECT_LT(max_abs(out.data, img.data), 1e-3);
}

TEST(EncConv, MatchesPlainConvolution) {
  const auto& e = desk();
  Prng rng(3);
  for (int t = 0; t < 15; ++t) {
    const std::size_t C = 1 + rng.uniform_below(2), O = 1 + rng.uniform_below(3), k = 1 + rng.uniform_below(3);
    const std::size_t stride = 1 + rng.uniform_below(2), pad = rng.uniform_below(2);
    const std::size_t H = k + 1 + rng.uniform_below(4), W = k + 1 + rng.uniform_below(4);
    auto c = conv_of(C, O, k, stride, pad);
    if (t == 0) {
      c = conv_of(1, 1, 2, 1, 0);
    }
    for (auto& v : c.weight) v = rng.uniform(-1, 1);
    for (auto& v : c.bias) v = rng.uniform(-1, 1);
    const auto img = random_tensor(t == 0 ? nn::Shape{1, 4, 4} : nn::Shape{c.in_channels, H, W}, rng);
    const auto want = oracle::conv2d(img.data, img.shape[0], img.shape[1], img.shape[2], c.weight, c.bias,
                                     c.out_channels, c.kernel, c.stride, c.padding);
    const auto out = e.open(enc_conv2d(e.image(img, c, rng), EncLayerSpec::make_conv(c), e.env));
    EXPECT_LT(max_abs(out.data, want), 1e-3) << "trial " << t;
  }
}

TEST(EncConv, RejectsWrongLayout) {
  const auto& e = desk();
  Prng rng(4);
  const auto x = e.flat(nn::Tensor({1, 2, 2}), 4, rng);
  EXPECT_THROW(enc_conv2d(x, EncLayerSpec::make_conv(conv_of(1, 1, 1, 1, 0)), e.env), ShapeError);
}

// ---- dense ----

TEST(EncDense, TwoByTwo) {
  const auto& e = desk();
  Prng rng(5);
  const auto x = e.flat(nn::Tensor({2}, {5, 6}), 2, rng);
  const auto y = enc_dense(x, EncLayerSpec::make_dense(2, 2, {1, 2, 3, 4}, {0, 0}), e.env);
  const auto out = e.open(y);
  EXPECT_NEAR(out.data[0], 17.0, 1e-3);
  EXPECT_NEAR(out.data[1], 39.0, 1e-3);
  EXPECT_EQ(y.cts[0].level, e.ctx->max_level() - 1);
}

TEST(EncDense, Identity) {
  const auto& e = desk();
  Prng rng(6);
  const auto v = random_tensor({4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const auto out = e.open(enc_dense(e.flat(v, 4, rng), EncLayerSpec::make_dense(4, 4, eye, {}), e.env));
  EXPECT_LT(max_abs(out.data, v.data), 1e-3);
}

TEST(EncDense, ZeroMatrixGivesBias) {
  const auto& e = desk();
  Prng rng(7);
  const auto out = e.open(
      enc_dense(e.flat(nn::Tensor({2}, {3, -4}), 2, rng), EncLayerSpec::make_dense(2, 2, {0, 0, 0, 0}, {1, 1}), e.env));
  EXPECT_NEAR(out.data[0], 1.0, 1e-3);
  EXPECT_NEAR(out.data[1], 1.0, 1e-3);
}

TEST(EncDense, MatchesMatvec) {
  const auto& e = desk();
  Prng rng(8);
  for (int t = 0; t < 15; ++t) {
    const std::size_t rows = 1 + rng.uniform_below(20), cols = 1 + rng.uniform_below(40);
    std::vector<double> m(rows * cols), b(rows);
    for (auto& v : m) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    const auto x = random_tensor({cols}, rng);
    const std::size_t p = next_pow2(std::max(rows, cols));
    const auto out = e.open(enc_dense(e.flat(x, p, rng), EncLayerSpec::make_dense(rows, cols, m, b), e.env));
    EXPECT_LT(max_abs(out.data, naive_matvec(m, b, rows, x.data)), 1e-3) << rows << "x" << cols;
  }
}

TEST(EncDense, ShapeMismatch) {
  const auto& e = desk();
  Prng rng(9);
  EXPECT_THROW(enc_dense(e.flat(nn::Tensor({3}), 4, rng), EncLayerSpec::make_dense(2, 2, {1, 0, 0, 1}, {}), e.env),
               ShapeError);
}

TEST(EncDense, MissingRotationKey) {
  const auto ctx = he::make_context(he::CkksParams::desk());
  const std::vector<long> none;
  const auto keys = he::keygen(*ctx, 4, none);
  EncEnv env(ctx, keys.public_keys);
  Prng rng(10);
  const auto x = pack_flat(nn::Tensor({2}, {1, 2}), 2, *ctx, keys.public_keys->public_key, rng);
  EXPECT_THROW(enc_dense(x, EncLayerSpec::make_dense(2, 2, {1, 2, 3, 4}, {}), env), KeyError);
}

// ---- activation ----

TEST(EncPoly, Square) {
  const auto& e = desk();
  Prng rng(12);
  const auto out = e.open(enc_poly_act(e.flat(nn::Tensor({2}, {2, -3}), 2, rng), {0, 0, 1}, e.env));
  EXPECT_NEAR(out.data[0], 4.0, 1e-3);
  EXPECT_NEAR(out.data[1], 9.0, 1e-3);
}

TEST(EncPoly, Identity) {
  const auto& e = desk();
  Prng rng(13);
  const auto x = random_tensor({8}, rng);
  const auto y = enc_poly_act(e.flat(x, 8, rng), {0, 1, 0}, e.env);
  EXPECT_EQ(y.cts[0].level, e.ctx->max_level());
  EXPECT_LT(max_abs(e.open(y).data, x.data), 1e-3);
}

TEST(EncPoly, ReluLeastSquaresFit) {
  // Normal equations for ReLU on [-a, a] solve to c2 = 15/(32a), c1 = 1/2, c0 = 3a/32.
  const double a = 5.0;
  const double c2 = 15.0 / (32.0 * a), c1 = 0.5, c0 = 3.0 * a / 32.0;
  const auto fit = nn::fit_relu_poly(-a, a);
  EXPECT_NEAR(fit.c2, c2, 1e-9);
  EXPECT_NEAR(fit.c1, c1, 1e-9);
  EXPECT_NEAR(fit.c0, c0, 1e-9);

  const auto& e = desk();
  Prng rng(14);
  const auto x = random_tensor({64}, rng, -a, a);
  const auto y = enc_poly_act(e.flat(x, 64, rng), {c0, c1, c2}, e.env);
  EXPECT_EQ(y.cts[0].level, e.ctx->max_level() - 2);
  const auto out = e.open(y);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(out.data[i], c2 * x.data[i] * x.data[i] + c1 * x.data[i] + c0, 1e-3);
  }
}

TEST(EncPoly, RandomCoefficients) {
  const auto& e = desk();
  Prng rng(15);
  for (int t = 0; t < 10; ++t) {
    const std::array<double, 3> c{rng.uniform(-1, 1), rng.uniform(-1, 1), t % 3 == 0 ? 1.0 : rng.uniform(-1, 1)};
    const auto x = random_tensor({16}, rng, -2, 2);
    const auto out = e.open(enc_poly_act(e.flat(x, 16, rng), c, e.env));
    std::vector<double> want;
    for (double v : x.data) want.push_back(c[2] * v * v + c[1] * v + c[0]);
    EXPECT_LT(max_abs(out.data, want), 1e-3);
  }
}

TEST(EncPoly, NeedsLevels) {
  const auto p = he::CkksParams::from_bit_sizes(4096, {50, 30}, 60, std::pow(2.0, 30));
  const Env e(p);
  Prng rng(16);
  const auto x = e.flat(nn::Tensor({2}, {1, 2}), 2, rng);
  EXPECT_THROW(enc_poly_act(x, {0, 0.5, 0.5}, e.env), DepthError);
  EXPECT_NO_THROW(enc_poly_act(x, {0, 0, 1}, e.env));
}

// ---- pooling ----

TEST(EncPool, TwoByTwoMean) {
  const auto& e = desk();
  Prng rng(17);
  const auto y = enc_avgpool(e.flat(nn::Tensor({1, 2, 2}, {1, 2, 3, 4}), 4, rng), 2, e.env);
  EXPECT_EQ(y.logical_shape, (nn::Shape{1, 1, 1}));
  EXPECT_NEAR(e.open(y).data[0], 2.5, 1e-3);
}

TEST(EncPool, WindowOneIsIdentity) {
  const auto& e = desk();
  Prng rng(18);
  const auto x = random_tensor({2, 3, 3}, rng);
  const auto y = enc_avgpool(e.flat(x, 32, rng), 1, e.env);
  EXPECT_EQ(y.cts[0].level, e.ctx->max_level());
  EXPECT_LT(max_abs(e.open(y).data, x.data), 1e-3);
}

TEST(EncPool, AllEqual) {
  const auto& e = desk();
  Prng rng(19);
  nn::Tensor x({2, 4, 4}, std::vector<double>(32, 0.7));
  for (double v : e.open(enc_avgpool(e.flat(x, 32, rng), 2, e.env)).data) EXPECT_NEAR(v, 0.7, 1e-3);
}

TEST(EncPool, MatchesMeanOracle) {
  const auto& e = desk();
  Prng rng(20);
  for (int t = 0; t < 10; ++t) {
    const std::size_t w = 2 + rng.uniform_below(2);
    const auto x = random_tensor({1 + rng.uniform_below(3), w * (1 + rng.uniform_below(3)), w * (1 + rng.uniform_below(3))}, rng);
    const auto out = e.open(enc_avgpool(e.flat(x, next_pow2(x.size()), rng), w, e.env));
    EXPECT_LT(max_abs(out.data, naive_avgpool(x, w)), 1e-3);
  }
}

TEST(EncPool, AfterConvolutionPerChannel) {
  const auto& e = desk();
  Prng rng(21);
  auto c = conv_of(1, 2, 3, 1, 0);
  for (auto& v : c.weight) v = rng.uniform(-1, 1);
  const auto img = random_tensor({1, 6, 6}, rng);
  const auto y = enc_avgpool(enc_conv2d(e.image(img, c, rng), EncLayerSpec::make_conv(c), e.env), 2, e.env);
  const auto conv = oracle::conv2d(img.data, 1, 6, 6, c.weight, c.bias, 2, 3, 1, 0);
  EXPECT_LT(max_abs(e.open(y).data, naive_avgpool(nn::Tensor({2, 4, 4}, conv), 2)), 1e-3);
}

// ---- segments ----

TEST(Segment, EmptyIsIdentity) {
  const auto& e = desk();
  Prng rng(22);
  const auto x = random_tensor({3}, rng);
  const auto y = eval_encrypted_segment(e.flat(x, 4, rng), {}, e.env);
  EXPECT_LT(max_abs(e.open(y).data, x.data), 1e-3);
}

TEST(Segment, DenseThenSquare) {
  const auto& e = desk();
  Prng rng(23);
  const std::vector<EncLayerSpec> layers{EncLayerSpec::make_dense(2, 2, {1, 0, 0, 1}, {}),
                                         EncLayerSpec::make_poly(0, 0, 1)};
  const auto out = e.open(eval_encrypted_segment(e.flat(nn::Tensor({2}, {1, 2}), 2, rng), layers, e.env));
  EXPECT_NEAR(out.data[0], 1.0, 1e-3);
  EXPECT_NEAR(out.data[1], 4.0, 1e-3);
}

TEST(Segment, DepthErrorNamesLayer) {
  const auto p = he::CkksParams::from_bit_sizes(4096, {50, 30, 30}, 60, std::pow(2.0, 30));
  const Env e(p);
  Prng rng(24);
  const std::vector<EncLayerSpec> layers{
      EncLayerSpec::make_dense(2, 2, {1, 0, 0, 1}, {}), EncLayerSpec::make_poly(0, 0, 1),
      EncLayerSpec::make_dense(2, 2, {1, 0, 0, 1}, {}), EncLayerSpec::make_poly(0, 0, 1)};
  try {
    eval_encrypted_segment(e.flat(nn::Tensor({2}, {1, 2}), 2, rng), layers, e.env);
    FAIL() << "expected DepthError";
  } catch (const DepthError& err) {
    EXPECT_NE(std::string(err.what()).find("layer 2"), std::string::npos) << err.what();
  }
}

TEST(Segment, LoweredModelMatchesPlaintext) {
  const auto& e = desk();
  Prng rng(25);
  for (int t = 0; t < 10; ++t) {
    auto m = nn::make_arch("fixture7", {1, 6, 6}, 3, 100 + t);
    m = nn::substitute_for_encryption(m, {});
    // tail starting after the convolution keeps the depth within budget
    const auto parts = nn::split(m, {1, 1});
    const auto& tail = parts[2];
    const auto layers = lower_model(tail, false);
    ASSERT_LE(segment_depth(layers), e.ctx->max_level());
    const auto x = random_tensor(tail.input_shape, rng, 0, 1);
    const std::size_t p = segment_period(layers, tail.input_shape);
    const auto out = e.open(eval_encrypted_segment(e.flat(x, p, rng), layers, e.env));
    const auto plain = nn::forward(tail, x);
    EXPECT_LT(max_abs(out.data, plain.data), 1e-2) << "trial " << t;
    EXPECT_LT(max_abs(eval_plain_segment(x, layers).data, plain.data), 1e-9);
  }
}

TEST(Segment, LeadingConvolutionPath) {
  const auto& e = desk();
  Prng rng(26);
  auto m = nn::make_arch("fixture7", {1, 6, 6}, 3, 7);
  m = nn::substitute_for_encryption(m, {});
  const auto head = nn::split(m, {3, 1})[0];  // conv, poly, avgpool
  const auto layers = lower_model(head, true);
  ASSERT_EQ(layers.front().kind, EncLayerSpec::Kind::Conv2d);
  const auto x = random_tensor(head.input_shape, rng, 0, 1);
  const auto& conv = std::get<nn::Conv2d>(head.layers[0]);
  const auto y = eval_encrypted_segment(e.image(x, conv, rng), layers, e.env);
  EXPECT_LT(max_abs(e.open(y).data, nn::forward(head, x).data), 1e-2);
}

TEST(Lowering, RejectsUnsubstitutedLayers) {
  const auto m = nn::make_arch("fixture7", {1, 6, 6}, 3, 7);
  EXPECT_THROW(lower_model(m, false), SplitError);
}

TEST(Lowering, ConvBatchNormToeplitzMatchesForward) {
  Prng rng(27);
  for (int t = 0; t < 10; ++t) {
    auto [conv, in] = oracle::random_layer("conv2d", rng);
    nn::Model m;
    m.input_shape = in;
    m.layers.push_back(conv);
    auto [bn, bn_in] = oracle::random_layer("batchnorm", rng);
    auto& b = std::get<nn::BatchNorm>(bn);
    const std::size_t O = std::get<nn::Conv2d>(conv).out_channels;
    b.channels = O;
    b.gamma.assign(O, 1.3);
    b.beta.assign(O, 0.2);
    b.mean.assign(O, -0.1);
    b.var.assign(O, 0.8);
    m.layers.push_back(bn);
    m.layers.push_back(nn::AvgPool{1});
    m.layers.push_back(nn::Flatten{});
    m.num_classes = nn::numel(m.output_shape());
    const auto x = random_tensor(in, rng);
    const auto layers = lower_model(m, false);
    EXPECT_LT(max_abs(eval_plain_segment(x, layers).data, nn::forward(m, x).data), 1e-9);
  }
}
