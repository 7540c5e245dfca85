#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "splitfhe/error.hpp"
#include "splitfhe/he/ckks.hpp"

using namespace splitfhe;
using namespace splitfhe::he;

namespace {

struct DeskFixture {
  ContextPtr ctx = make_context(CkksParams::desk());
  KeyMaterial keys = keygen(*ctx, 1);
  Encoder encoder{ctx};
  Evaluator eval{ctx};

  Ciphertext enc(const std::vector<double>& v, Prng& rng) const {
    return encrypt(*ctx, encoder.encode(v, ctx->params().scale), keys.public_keys->public_key, rng);
  }
  std::vector<double> dec(const Ciphertext& ct) const { return encoder.decode(decrypt(*ctx, ct, keys.secret_key)); }
};

const DeskFixture& desk() {
  static const DeskFixture f;
  return f;
}

std::vector<double> random_vector(std::size_t n, Prng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double max_err(const std::vector<double>& got, const std::vector<double>& want) {
  double e = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) e = std::max(e, std::abs(got[i] - want[i]));
  return e;
}

// Independent evaluation of m(X) at zeta^(5^j) straight from coefficients.
std::vector<double> naive_embedding(const std::vector<double>& coeffs, std::size_t slots) {
  const std::size_t n = coeffs.size();
  const std::size_t m = 2 * n;
  std::vector<double> out(slots);
  std::size_t g = 1;
  for (std::size_t j = 0; j < slots; ++j) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ang = std::numbers::pi * 2.0 * static_cast<double>((g * i) % m) / static_cast<double>(m);
      acc += coeffs[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[j] = acc.real();
    g = (g * 5) % m;
  }
  return out;
}

}  // namespace

TEST(Params, BuiltInProfilesAreValid) {
  auto desk_p = CkksParams::desk();
  desk_p.validate();
  EXPECT_EQ(desk_p.ring_degree, 4096u);
  EXPECT_EQ(desk_p.scale, std::ldexp(1.0, 30));
  auto p128 = CkksParams::paper128();
  p128.validate();
  EXPECT_EQ(p128.ring_degree, 32768u);
  EXPECT_EQ(p128.scale, std::ldexp(1.0, 40));
  for (u64 q : p128.modulus_chain) EXPECT_EQ(q % (2 * p128.ring_degree), 1u);
}

TEST(Params, RejectsBadDegreeAndNonNttPrime) {
  auto p = CkksParams::desk();
  p.ring_degree = 3000;
  EXPECT_THROW(p.validate(), ParameterError);
  p = CkksParams::desk();
  p.modulus_chain[1] += 2;
  EXPECT_THROW(p.validate(), ParameterError);
  p = CkksParams::desk();
  p.scale = std::ldexp(1.0, 40);
  EXPECT_THROW(p.validate(), ParameterError);
}

TEST(Ntt, ForwardInverseRoundTripAndConvolution) {
  const std::size_t n = 64;
  const u64 qv = find_ntt_prime(30, n, {});
  Modulus q(qv);
  NttTables t(q, n);
  Prng rng(5);
  std::vector<u64> a(n), b(n);
  for (auto& x : a) x = rng.uniform_below(qv);
  for (auto& x : b) x = rng.uniform_below(qv);
  // Naive negacyclic product.
  std::vector<u64> want(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const u64 prod = q.mul(a[i], b[j]);
      const std::size_t k = i + j;
      if (k < n) {
        want[k] = q.add(want[k], prod);
      } else {
        want[k - n] = q.sub(want[k - n], prod);
      }
    }
  }
  auto fa = a, fb = b;
  t.forward(fa.data());
  t.forward(fb.data());
  std::vector<u64> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = q.mul(fa[i], fb[i]);
  t.inverse(c.data());
  EXPECT_EQ(c, want);
  t.inverse(fa.data());
  EXPECT_EQ(fa, a);
}

TEST(Encoder, MatchesNaiveEmbeddingOracle) {
  auto params = CkksParams::from_bit_sizes(64, {50, 30}, 60, std::ldexp(1.0, 20));
  auto ctx = make_context(params);
  Encoder enc(ctx);
  Prng rng(9);
  auto v = random_vector(32, rng);
  auto pt = enc.encode(v, params.scale, 0);
  RnsPoly coeffs = pt.coeffs;
  auto mods = data_moduli(0);
  poly_from_ntt(*ctx, coeffs, mods);
  std::vector<double> c(64);
  for (std::size_t i = 0; i < 64; ++i) {
    c[i] = static_cast<double>(ctx->modulus(0).centered(coeffs.row(0)[i])) / params.scale;
  }
  EXPECT_LT(max_err(naive_embedding(c, 32), v), 1e-4);
}

TEST(Encoder, RoundTrips) {
  const auto& f = desk();
  const double scale = f.ctx->params().scale;
  auto zeros = f.encoder.decode(f.encoder.encode(std::vector<double>(10, 0.0), scale));
  EXPECT_LT(max_err(zeros, std::vector<double>(2048, 0.0)), std::ldexp(1.0, -20));

  std::vector<double> small{1.5, -2.25};
  auto got = f.encoder.decode(f.encoder.encode(small, scale));
  EXPECT_LT(max_err(got, small), std::ldexp(1.0, -20));

  Prng rng(3);
  auto v = random_vector(2048, rng, -10.0, 10.0);
  EXPECT_LT(max_err(f.encoder.decode(f.encoder.encode(v, scale)), v), 1e-6);
  for (std::size_t level = 0; level <= f.ctx->max_level(); ++level) {
    EXPECT_LT(max_err(f.encoder.decode(f.encoder.encode(v, scale, level)), v), 1e-6) << level;
  }
}

TEST(Encoder, TooLongVectorIsCapacityError) {
  const auto& f = desk();
  std::vector<double> v(2049, 1.0);
  EXPECT_THROW(f.encoder.encode(v, f.ctx->params().scale), CapacityError);
}

TEST(Encoder, ConstantFillsEverySlot) {
  const auto& f = desk();
  auto got = f.encoder.decode(f.encoder.encode_constant(-0.75, f.ctx->params().scale, 3));
  EXPECT_LT(max_err(got, std::vector<double>(2048, -0.75)), 1e-8);
}

TEST(Crypto, EncryptDecryptRoundTrip) {
  const auto& f = desk();
  Prng rng(11);
  auto zero = f.dec(f.enc(std::vector<double>(2048, 0.0), rng));
  // Per-slot noise is Gaussian with sigma ~ 6e-7 at scale 2^30; the maximum
  // over 2048 slots lands a few sigma out.
  double sq = 0.0;
  for (double z : zero) sq += z * z;
  EXPECT_LT(std::sqrt(sq / zero.size()), 1e-6);
  EXPECT_LT(max_err(zero, std::vector<double>(2048, 0.0)), 1e-5);
  auto pi = f.dec(f.enc({3.14159}, rng));
  EXPECT_NEAR(pi[0], 3.14159, 1e-5);
  auto ct = f.enc({1.0}, rng);
  EXPECT_EQ(ct.level, f.ctx->max_level());
}

TEST(Crypto, WrongSecretKeyGivesGarbage) {
  const auto& f = desk();
  auto other = keygen(*f.ctx, 999, std::vector<long>{});
  Prng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto v = random_vector(16, rng);
    auto ct = f.enc(v, rng);
    auto got = f.encoder.decode(decrypt(*f.ctx, ct, other.secret_key));
    EXPECT_GT(max_err(got, v), 1.0);
  }
}

TEST(Crypto, KeygenIsDeterministic) {
  auto ctx = make_context(CkksParams::from_bit_sizes(1024, {50, 30}, 60, std::ldexp(1.0, 30)));
  auto a = keygen(*ctx, 42);
  auto b = keygen(*ctx, 42);
  EXPECT_EQ(serialize_public_keys(*a.public_keys), serialize_public_keys(*b.public_keys));
  EXPECT_EQ(serialize_secret_key(a.secret_key), serialize_secret_key(b.secret_key));
  auto c = keygen(*ctx, 43);
  EXPECT_NE(serialize_secret_key(a.secret_key), serialize_secret_key(c.secret_key));
}

TEST(Crypto, DigestMismatchRejected) {
  const auto& f = desk();
  auto other_ctx = make_context(CkksParams::from_bit_sizes(4096, {50, 30, 30}, 60, std::ldexp(1.0, 30)));
  auto other = keygen(*other_ctx, 1, std::vector<long>{});
  Prng rng(1);
  auto ct = f.enc({1.0}, rng);
  EXPECT_THROW(decrypt(*f.ctx, ct, other.secret_key), KeyError);
  EXPECT_THROW(decrypt(*other_ctx, ct, other.secret_key), ParameterError);
}

TEST(Evaluator, AddExamples) {
  const auto& f = desk();
  Prng rng(21);
  auto sum = f.dec(f.eval.add(f.enc({1, 2}, rng), f.enc({3, 4}, rng)));
  EXPECT_NEAR(sum[0], 4.0, 1e-5);
  EXPECT_NEAR(sum[1], 6.0, 1e-5);
  auto v = random_vector(100, rng);
  auto same = f.dec(f.eval.add(f.enc(v, rng), f.enc({}, rng)));
  EXPECT_LT(max_err(same, v), 1e-5);
  auto plain = f.dec(f.eval.add_plain(f.enc({1, 2}, rng), f.encoder.encode(std::vector<double>{0.5, 0.25},
                                                                            f.ctx->params().scale)));
  EXPECT_NEAR(plain[0], 1.5, 1e-5);
  EXPECT_NEAR(plain[1], 2.25, 1e-5);
  auto diff = f.dec(f.eval.sub(f.enc({1, 2}, rng), f.enc({3, 5}, rng)));
  EXPECT_NEAR(diff[1], -3.0, 1e-5);
}

TEST(Evaluator, AlignmentErrors) {
  const auto& f = desk();
  Prng rng(22);
  auto a = f.enc({1}, rng);
  auto b = f.eval.mod_drop(f.enc({1}, rng), a.level - 1);
  EXPECT_THROW(f.eval.add(a, b), AlignmentError);
  auto c = f.enc({1}, rng);
  c.scale *= 2.0;
  EXPECT_THROW(f.eval.add(a, c), AlignmentError);
}

TEST(Evaluator, MultiplyExamples) {
  const auto& f = desk();
  Prng rng(23);
  const auto& relin = f.keys.public_keys->relin_key;
  auto prod = f.dec(f.eval.rescale(f.eval.mul(f.enc({2, 3}, rng), f.enc({5, 7}, rng), relin)));
  EXPECT_NEAR(prod[0], 10.0, 1e-4);
  EXPECT_NEAR(prod[1], 21.0, 1e-4);

  auto v = random_vector(2048, rng);
  auto ct = f.enc(v, rng);
  auto ones = f.encoder.encode(std::vector<double>(2048, 1.0), f.ctx->params().scale);
  EXPECT_LT(max_err(f.dec(f.eval.rescale(f.eval.mul_plain(ct, ones))), v), 1e-4);
}

TEST(Evaluator, RescaleRestoresScaleAndRejectsLevelZero) {
  const auto& f = desk();
  Prng rng(24);
  const double delta = f.ctx->params().scale;
  auto ct = f.eval.rescale(f.eval.mul(f.enc({1}, rng), f.enc({1}, rng), f.keys.public_keys->relin_key));
  EXPECT_NEAR(ct.scale / delta, 1.0, 0.01);
  EXPECT_EQ(ct.level, f.ctx->max_level() - 1);
  auto bottom = f.eval.mod_drop(ct, 0);
  EXPECT_THROW(f.eval.rescale(bottom), DepthError);
  EXPECT_THROW(f.eval.mul(bottom, bottom, f.keys.public_keys->relin_key), DepthError);
}

TEST(Evaluator, ChainingPastBudgetIsDepthError) {
  const auto& f = desk();
  Prng rng(25);
  auto ct = f.enc({1.01}, rng);
  const auto& relin = f.keys.public_keys->relin_key;
  for (std::size_t i = 0; i < f.ctx->params().depth_budget(); ++i) ct = f.eval.rescale(f.eval.mul(ct, ct, relin));
  EXPECT_EQ(ct.level, 0u);
  EXPECT_NEAR(f.dec(ct)[0], std::pow(1.01, 32), 1e-3);
  EXPECT_THROW(f.eval.mul(ct, ct, relin), DepthError);
}

TEST(Evaluator, RotateExamples) {
  const auto& f = desk();
  Prng rng(26);
  const auto& gk = f.keys.public_keys->galois_keys;
  const std::vector<double> v{1, 2, 3, 4};
  auto r0 = f.dec(f.eval.rotate(f.enc(v, rng), 0, gk));
  EXPECT_LT(max_err(r0, v), 1e-5);

  auto r1 = f.dec(f.eval.rotate(f.enc({1, 2, 3, 4}, rng), 1, gk));
  EXPECT_NEAR(r1[0], 2.0, 1e-5);
  EXPECT_NEAR(r1[2], 4.0, 1e-5);
  EXPECT_NEAR(r1[3], 0.0, 1e-5);
  EXPECT_NEAR(r1[2047], 1.0, 1e-5);

  auto full = f.dec(f.eval.rotate(f.enc(v, rng), 2048, gk));
  EXPECT_LT(max_err(full, v), 1e-5);
}

TEST(Evaluator, RotationGroupProperty) {
  const auto& f = desk();
  Prng rng(27);
  const auto& gk = f.keys.public_keys->galois_keys;
  auto v = random_vector(2048, rng);
  auto ct = f.enc(v, rng);
  for (auto [i, j] : {std::pair{3L, 5L}, {-7L, 100L}, {1000L, 1500L}}) {
    auto lhs = f.dec(f.eval.rotate(f.eval.rotate(ct, i, gk), j, gk));
    auto rhs = f.dec(f.eval.rotate(ct, (i + j) % 2048, gk));
    EXPECT_LT(max_err(lhs, rhs), 1e-4);
    std::vector<double> shifted(2048);
    const long k = ((i + j) % 2048 + 2048) % 2048;
    for (long s = 0; s < 2048; ++s) shifted[s] = v[(s + k) % 2048];
    EXPECT_LT(max_err(rhs, shifted), 1e-4);
  }
}

TEST(Evaluator, MissingGaloisKeyIsKeyError) {
  const auto& f = desk();
  Prng rng(28);
  GaloisKeys pos;
  pos.emplace(1, f.keys.public_keys->galois_keys.at(1));
  pos.emplace(2, f.keys.public_keys->galois_keys.at(2));
  auto ct = f.enc({1}, rng);
  EXPECT_EQ(f.eval.rotation_plan(3, pos), (std::vector<long>{1, 2}));
  EXPECT_EQ(f.eval.rotation_plan(3, f.keys.public_keys->galois_keys), (std::vector<long>{-1, 4}));
  EXPECT_NO_THROW(f.eval.rotate(ct, 3, pos));
  EXPECT_THROW(f.eval.rotate(ct, -1, GaloisKeys{}), KeyError);
  GaloisKeys positive;
  positive.emplace(2, f.keys.public_keys->galois_keys.at(2));
  EXPECT_THROW(f.eval.rotate(ct, 1, positive), KeyError);
}

TEST(Evaluator, HomomorphismProperty) {
  const auto& f = desk();
  Prng rng(29);
  const auto& relin = f.keys.public_keys->relin_key;
  double worst_add = 0.0, worst_mul = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_vector(64, rng);
    auto b = random_vector(64, rng);
    auto ca = f.enc(a, rng);
    auto cb = f.enc(b, rng);
    std::vector<double> s(64), p(64);
    for (int i = 0; i < 64; ++i) {
      s[i] = a[i] + b[i];
      p[i] = a[i] * b[i];
    }
    worst_add = std::max(worst_add, max_err(f.dec(f.eval.add(ca, cb)), s));
    worst_mul = std::max(worst_mul, max_err(f.dec(f.eval.rescale(f.eval.mul(ca, cb, relin))), p));
  }
  EXPECT_LT(worst_add, 1e-5);
  EXPECT_LT(worst_mul, 1e-4);
}

TEST(Serialize, CiphertextSizeAndRoundTrip) {
  const auto& f = desk();
  Prng rng(30);
  auto ct = f.eval.mod_drop(f.enc({1, 2, 3}, rng), 2);
  auto bytes = serialize_ct(ct);
  EXPECT_EQ(bytes.size() - kCiphertextHeaderBytes, 196608u);
  EXPECT_EQ(bytes.size(), serialized_ciphertext_size(4096, 2));
  auto back = deserialize_ct(bytes, *f.ctx);
  EXPECT_EQ(back, ct);
  EXPECT_EQ(serialize_ct(back), bytes);
}

TEST(Serialize, TruncatedOrCorruptBufferRejected) {
  const auto& f = desk();
  Prng rng(31);
  auto bytes = serialize_ct(f.enc({1}, rng));
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(deserialize_ct(cut, *f.ctx), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_ct(bad, *f.ctx), FormatError);
  EXPECT_THROW(deserialize_ct(std::span<const std::uint8_t>{}, *f.ctx), FormatError);
}

TEST(Serialize, KeysRoundTrip) {
  auto ctx = make_context(CkksParams::from_bit_sizes(1024, {50, 30, 30}, 60, std::ldexp(1.0, 30)));
  auto km = keygen(*ctx, 5, std::vector<long>{1, -1, 4});
  auto bytes = serialize_public_keys(*km.public_keys);
  auto back = deserialize_public_keys(bytes, *ctx);
  EXPECT_EQ(serialize_public_keys(back), bytes);
  // public key + relin + 3 galois keys; each KSK holds L digits x 2 polys x (L+1) rows.
  const std::size_t ksk = 3 * 2 * 4 * 1024 * 8;
  EXPECT_EQ(bytes.size(), 4 + 16 + 2 * 4 * 1024 * 8 + ksk + 4 + 3 * (8 + ksk));
  auto sk = deserialize_secret_key(serialize_secret_key(km.secret_key), *ctx);
  EXPECT_EQ(sk.ntt, km.secret_key.ntt);
}
