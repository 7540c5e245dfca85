#include "splitfhe/error.hpp"
#include "splitfhe/he/ckks.hpp"

namespace splitfhe::he {

namespace {

// Uniform residues sampled directly in the NTT domain (the NTT is a bijection).
RnsPoly sample_uniform(const CkksContext& ctx, std::span<const std::size_t> moduli, Prng& rng) {
  RnsPoly p(ctx.ring_degree(), moduli.size());
  for (std::size_t r = 0; r < moduli.size(); ++r) {
    const u64 q = ctx.modulus(moduli[r]).value();
    u64* row = p.row(r);
    for (std::size_t i = 0; i < p.n; ++i) row[i] = rng.uniform_below(q);
  }
  return p;
}

// Small-coefficient polynomial lifted to every listed prime and NTT'd.
template <typename T>
RnsPoly lift_small(const CkksContext& ctx, std::span<const T> coeffs, std::span<const std::size_t> moduli) {
  RnsPoly p(ctx.ring_degree(), moduli.size());
  for (std::size_t r = 0; r < moduli.size(); ++r) {
    const Modulus& q = ctx.modulus(moduli[r]);
    u64* row = p.row(r);
    for (std::size_t i = 0; i < p.n; ++i) row[i] = q.reduce_signed(static_cast<std::int64_t>(coeffs[i]));
  }
  poly_to_ntt(ctx, p, moduli);
  return p;
}

std::vector<std::int64_t> sample_gaussian(std::size_t n, Prng& rng) {
  std::vector<std::int64_t> e(n);
  for (auto& x : e) x = rng.discrete_gaussian(kErrorStddev);
  return e;
}

std::vector<std::int8_t> sample_ternary(std::size_t n, Prng& rng) {
  std::vector<std::int8_t> s(n);
  for (auto& x : s) x = static_cast<std::int8_t>(rng.ternary());
  return s;
}

std::vector<std::size_t> all_moduli(const CkksContext& ctx) {
  return data_and_special_moduli(ctx, ctx.max_level());
}

// Key switching key from `from` (NTT form over all moduli) to the secret key.
KSwitchKey make_ksk(const CkksContext& ctx, const SecretKey& sk, const RnsPoly& from, Prng& rng) {
  const auto mods = all_moduli(ctx);
  const std::size_t digits = ctx.chain_length();
  KSwitchKey key;
  key.b.reserve(digits);
  key.a.reserve(digits);
  for (std::size_t j = 0; j < digits; ++j) {
    RnsPoly a = sample_uniform(ctx, mods, rng);
    const auto e_coeffs = sample_gaussian(ctx.ring_degree(), rng);
    RnsPoly b = lift_small<std::int64_t>(ctx, e_coeffs, mods);
    for (std::size_t r = 0; r < mods.size(); ++r) {
      const Modulus& q = ctx.modulus(mods[r]);
      u64* brow = b.row(r);
      const u64* arow = a.row(r);
      const u64* srow = sk.ntt.row(r);
      for (std::size_t i = 0; i < b.n; ++i) brow[i] = q.sub(brow[i], q.mul(arow[i], srow[i]));
      if (r == j) {
        const u64 p_mod = ctx.special_mod(j);
        const u64* frow = from.row(r);
        for (std::size_t i = 0; i < b.n; ++i) brow[i] = q.add(brow[i], q.mul(p_mod, frow[i]));
      }
    }
    key.b.push_back(std::move(b));
    key.a.push_back(std::move(a));
  }
  return key;
}

}  // namespace

std::vector<long> default_rotation_steps(std::size_t slot_count) {
  std::vector<long> steps;
  for (std::size_t pw = 1; pw < slot_count; pw <<= 1) {
    steps.push_back(static_cast<long>(pw));
    steps.push_back(-static_cast<long>(pw));
  }
  return steps;
}

KSwitchKey make_galois_key(const CkksContext& ctx, const SecretKey& sk, long step, Prng& rng) {
  if (sk.params_digest != ctx.digest()) throw KeyError("secret key belongs to different parameters");
  const u64 g = ctx.galois_element(step);
  const std::size_t n = ctx.ring_degree();
  const std::size_t mask = 2 * n - 1;
  std::vector<std::int64_t> permuted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i * g) & mask;
    if (j < n) {
      permuted[j] = sk.coeffs[i];
    } else {
      permuted[j - n] = -sk.coeffs[i];
    }
  }
  const auto mods = all_moduli(ctx);
  const RnsPoly from = lift_small<std::int64_t>(ctx, permuted, mods);
  return make_ksk(ctx, sk, from, rng);
}

KeyMaterial keygen(const CkksContext& ctx, std::uint64_t seed) {
  const auto steps = default_rotation_steps(ctx.slot_count());
  return keygen(ctx, seed, steps);
}

KeyMaterial keygen(const CkksContext& ctx, std::uint64_t seed, std::span<const long> rotation_steps) {
  Prng rng(seed);
  const std::size_t n = ctx.ring_degree();
  const auto mods = all_moduli(ctx);
  KeyMaterial km;
  SecretKey& sk = km.secret_key;
  sk.params_digest = ctx.digest();
  sk.coeffs = sample_ternary(n, rng);
  sk.ntt = lift_small<std::int8_t>(ctx, sk.coeffs, mods);

  auto keys = std::make_shared<EvaluationKeys>();
  keys->params_digest = ctx.digest();

  PublicKey& pk = keys->public_key;
  pk.params_digest = ctx.digest();
  pk.a = sample_uniform(ctx, mods, rng);
  const auto e = sample_gaussian(n, rng);
  pk.b = lift_small<std::int64_t>(ctx, e, mods);
  for (std::size_t r = 0; r < mods.size(); ++r) {
    const Modulus& q = ctx.modulus(mods[r]);
    for (std::size_t i = 0; i < n; ++i) {
      pk.b.row(r)[i] = q.sub(pk.b.row(r)[i], q.mul(pk.a.row(r)[i], sk.ntt.row(r)[i]));
    }
  }

  RnsPoly s2(n, mods.size());
  for (std::size_t r = 0; r < mods.size(); ++r) {
    const Modulus& q = ctx.modulus(mods[r]);
    for (std::size_t i = 0; i < n; ++i) s2.row(r)[i] = q.mul(sk.ntt.row(r)[i], sk.ntt.row(r)[i]);
  }
  keys->relin_key = make_ksk(ctx, sk, s2, rng);

  for (long step : rotation_steps) {
    if (keys->galois_keys.count(step)) continue;
    keys->galois_keys.emplace(step, make_galois_key(ctx, sk, step, rng));
  }
  km.public_keys = std::move(keys);
  return km;
}

// Encryption of zero is formed modulo Q*P and divided by P, which shrinks the
// v*e + e0 + e1*s noise to rounding size before the message is added.
Ciphertext encrypt(const CkksContext& ctx, const PlaintextPoly& pt, const PublicKey& pk, Prng& rng) {
  if (pt.params_digest != ctx.digest() || pk.params_digest != ctx.digest()) {
    throw KeyError("plaintext or public key does not match the session parameters");
  }
  const std::size_t n = ctx.ring_degree();
  const auto mods = data_and_special_moduli(ctx, pt.level);

  const auto v_coeffs = sample_ternary(n, rng);
  const RnsPoly v = lift_small<std::int8_t>(ctx, v_coeffs, mods);
  const auto e0 = sample_gaussian(n, rng);
  const auto e1 = sample_gaussian(n, rng);
  RnsPoly z0 = lift_small<std::int64_t>(ctx, e0, mods);
  RnsPoly z1 = lift_small<std::int64_t>(ctx, e1, mods);
  for (std::size_t r = 0; r < mods.size(); ++r) {
    const Modulus& q = ctx.modulus(mods[r]);
    const u64* vr = v.row(r);
    const u64* br = pk.b.row(mods[r]);
    const u64* ar = pk.a.row(mods[r]);
    u64* x0 = z0.row(r);
    u64* x1 = z1.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      x0[i] = q.add(x0[i], q.mul(vr[i], br[i]));
      x1[i] = q.add(x1[i], q.mul(vr[i], ar[i]));
    }
  }

  Ciphertext ct;
  ct.c0 = mod_down_special(ctx, z0, pt.level);
  ct.c1 = mod_down_special(ctx, z1, pt.level);
  ct.scale = pt.scale;
  ct.level = pt.level;
  ct.params_digest = ctx.digest();
  for (std::size_t r = 0; r <= pt.level; ++r) {
    const Modulus& q = ctx.modulus(r);
    u64* c0 = ct.c0.row(r);
    const u64* mr = pt.coeffs.row(r);
    for (std::size_t i = 0; i < n; ++i) c0[i] = q.add(c0[i], mr[i]);
  }
  return ct;
}

PlaintextPoly decrypt(const CkksContext& ctx, const Ciphertext& ct, const SecretKey& sk) {
  if (ct.params_digest != ctx.digest()) throw ParameterError("ciphertext belongs to different parameters");
  if (sk.params_digest != ctx.digest()) throw KeyError("secret key belongs to different parameters");
  const std::size_t n = ctx.ring_degree();
  PlaintextPoly pt;
  pt.scale = ct.scale;
  pt.level = ct.level;
  pt.params_digest = ctx.digest();
  pt.coeffs = RnsPoly(n, ct.level + 1);
  for (std::size_t r = 0; r <= ct.level; ++r) {
    const Modulus& q = ctx.modulus(r);
    const u64* c0 = ct.c0.row(r);
    const u64* c1 = ct.c1.row(r);
    const u64* s = sk.ntt.row(r);
    u64* m = pt.coeffs.row(r);
    for (std::size_t i = 0; i < n; ++i) m[i] = q.add(c0[i], q.mul(c1[i], s[i]));
  }
  return pt;
}

}  // namespace splitfhe::he
