#include <algorithm>
#include <cmath>
#include <optional>

#include "splitfhe/error.hpp"
#include "splitfhe/he/ckks.hpp"

namespace splitfhe::he {

namespace {

constexpr double kScaleTolerance = 1e-9;

bool same_scale(double a, double b) { return std::abs(a - b) <= kScaleTolerance * std::max(a, b); }

void require_aligned(const Ciphertext& a, std::size_t level, double scale, const char* what) {
  if (a.level != level) {
    throw AlignmentError(std::string(what) + ": level mismatch (" + std::to_string(a.level) + " vs " +
                         std::to_string(level) + ")");
  }
  if (!same_scale(a.scale, scale)) {
    throw AlignmentError(std::string(what) + ": scale mismatch (" + std::to_string(a.scale) + " vs " +
                         std::to_string(scale) + ")");
  }
}

}  // namespace

void Evaluator::check(const Ciphertext& ct) const {
  if (ct.params_digest != ctx_->digest()) throw ParameterError("ciphertext belongs to different parameters");
  if (ct.level > ctx_->max_level() || ct.c0.rows != ct.level + 1 || ct.c1.rows != ct.level + 1) {
    throw ParameterError("malformed ciphertext");
  }
}

void Evaluator::add_inplace(Ciphertext& a, const Ciphertext& b) const {
  check(a);
  check(b);
  require_aligned(b, a.level, a.scale, "add");
  const std::size_t n = ctx_->ring_degree();
  for (std::size_t r = 0; r <= a.level; ++r) {
    const Modulus& q = ctx_->modulus(r);
    u64* x0 = a.c0.row(r);
    u64* x1 = a.c1.row(r);
    const u64* y0 = b.c0.row(r);
    const u64* y1 = b.c1.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      x0[i] = q.add(x0[i], y0[i]);
      x1[i] = q.add(x1[i], y1[i]);
    }
  }
}

Ciphertext Evaluator::add(const Ciphertext& a, const Ciphertext& b) const {
  Ciphertext out = a;
  add_inplace(out, b);
  return out;
}

Ciphertext Evaluator::sub(const Ciphertext& a, const Ciphertext& b) const {
  check(a);
  check(b);
  require_aligned(b, a.level, a.scale, "sub");
  Ciphertext out = a;
  const std::size_t n = ctx_->ring_degree();
  for (std::size_t r = 0; r <= a.level; ++r) {
    const Modulus& q = ctx_->modulus(r);
    for (std::size_t i = 0; i < n; ++i) {
      out.c0.row(r)[i] = q.sub(out.c0.row(r)[i], b.c0.row(r)[i]);
      out.c1.row(r)[i] = q.sub(out.c1.row(r)[i], b.c1.row(r)[i]);
    }
  }
  return out;
}

Ciphertext Evaluator::add_plain(const Ciphertext& ct, const PlaintextPoly& pt) const {
  check(ct);
  if (pt.params_digest != ctx_->digest()) throw ParameterError("plaintext belongs to different parameters");
  if (pt.level < ct.level) throw AlignmentError("add_plain: plaintext level below ciphertext level");
  if (!same_scale(ct.scale, pt.scale)) throw AlignmentError("add_plain: scale mismatch");
  Ciphertext out = ct;
  const std::size_t n = ctx_->ring_degree();
  for (std::size_t r = 0; r <= ct.level; ++r) {
    const Modulus& q = ctx_->modulus(r);
    u64* x = out.c0.row(r);
    const u64* m = pt.coeffs.row(r);
    for (std::size_t i = 0; i < n; ++i) x[i] = q.add(x[i], m[i]);
  }
  return out;
}

Ciphertext Evaluator::mul_plain(const Ciphertext& ct, const PlaintextPoly& pt) const {
  check(ct);
  if (pt.params_digest != ctx_->digest()) throw ParameterError("plaintext belongs to different parameters");
  if (pt.level < ct.level) throw AlignmentError("mul_plain: plaintext level below ciphertext level");
  if (ct.level == 0) throw DepthError("mul_plain: no level left to rescale the product");
  Ciphertext out = ct;
  out.scale = ct.scale * pt.scale;
  const std::size_t n = ctx_->ring_degree();
  for (std::size_t r = 0; r <= ct.level; ++r) {
    const Modulus& q = ctx_->modulus(r);
    u64* x0 = out.c0.row(r);
    u64* x1 = out.c1.row(r);
    const u64* m = pt.coeffs.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      x0[i] = q.mul(x0[i], m[i]);
      x1[i] = q.mul(x1[i], m[i]);
    }
  }
  return out;
}

Ciphertext Evaluator::mul(const Ciphertext& a, const Ciphertext& b, const KSwitchKey& relin_key) const {
  check(a);
  check(b);
  if (a.level != b.level) throw AlignmentError("mul: level mismatch");
  if (a.level == 0) throw DepthError("mul: no level left to rescale the product");
  const std::size_t n = ctx_->ring_degree();
  const std::size_t rows = a.level + 1;
  RnsPoly d0(n, rows), d1(n, rows), d2(n, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Modulus& q = ctx_->modulus(r);
    const u64* a0 = a.c0.row(r);
    const u64* a1 = a.c1.row(r);
    const u64* b0 = b.c0.row(r);
    const u64* b1 = b.c1.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      d0.row(r)[i] = q.mul(a0[i], b0[i]);
      d1.row(r)[i] = q.add(q.mul(a0[i], b1[i]), q.mul(a1[i], b0[i]));
      d2.row(r)[i] = q.mul(a1[i], b1[i]);
    }
  }
  auto [k0, k1] = key_switch(d2, a.level, relin_key);
  Ciphertext out;
  out.level = a.level;
  out.scale = a.scale * b.scale;
  out.params_digest = ctx_->digest();
  for (std::size_t r = 0; r < rows; ++r) {
    const Modulus& q = ctx_->modulus(r);
    for (std::size_t i = 0; i < n; ++i) {
      d0.row(r)[i] = q.add(d0.row(r)[i], k0.row(r)[i]);
      d1.row(r)[i] = q.add(d1.row(r)[i], k1.row(r)[i]);
    }
  }
  out.c0 = std::move(d0);
  out.c1 = std::move(d1);
  return out;
}

std::pair<RnsPoly, RnsPoly> Evaluator::key_switch(const RnsPoly& d_ntt, std::size_t level,
                                                  const KSwitchKey& key) const {
  const CkksContext& ctx = *ctx_;
  const std::size_t n = ctx.ring_degree();
  if (key.digit_count() != ctx.chain_length()) throw KeyError("key-switching key has the wrong digit count");
  const auto mods = data_and_special_moduli(ctx, level);
  const std::size_t rows = mods.size();

  RnsPoly acc0(n, rows), acc1(n, rows);
  std::vector<u64> digit(n), lifted(n);
  for (std::size_t j = 0; j <= level; ++j) {
    std::copy_n(d_ntt.row(j), n, digit.begin());
    ctx.ntt(j).inverse(digit.data());
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t mi = mods[r];
      const Modulus& q = ctx.modulus(mi);
      const u64* src;
      if (mi == j) {
        src = d_ntt.row(j);
      } else {
        for (std::size_t i = 0; i < n; ++i) lifted[i] = q.reduce(digit[i]);
        ctx.ntt(mi).forward(lifted.data());
        src = lifted.data();
      }
      const u64* kb = key.b[j].row(mi);
      const u64* ka = key.a[j].row(mi);
      u64* o0 = acc0.row(r);
      u64* o1 = acc1.row(r);
      for (std::size_t i = 0; i < n; ++i) {
        o0[i] = q.add(o0[i], q.mul(src[i], kb[i]));
        o1[i] = q.add(o1[i], q.mul(src[i], ka[i]));
      }
    }
  }

  return {mod_down_special(ctx, acc0, level), mod_down_special(ctx, acc1, level)};
}

Ciphertext Evaluator::rescale(const Ciphertext& ct) const {
  check(ct);
  if (ct.level == 0) throw DepthError("rescale: ciphertext is already at level 0");
  const CkksContext& ctx = *ctx_;
  const std::size_t n = ctx.ring_degree();
  const std::size_t l = ct.level;
  const Modulus& ql = ctx.modulus(l);
  Ciphertext out = ct;
  std::vector<u64> last(n), t(n);
  for (RnsPoly* poly : {&out.c0, &out.c1}) {
    std::copy_n(poly->row(l), n, last.begin());
    ctx.ntt(l).inverse(last.data());
    for (std::size_t r = 0; r < l; ++r) {
      const Modulus& q = ctx.modulus(r);
      for (std::size_t i = 0; i < n; ++i) t[i] = q.reduce_signed(ql.centered(last[i]));
      ctx.ntt(r).forward(t.data());
      const u64 inv = ctx.inv_q_mod(l, r);
      u64* row = poly->row(r);
      for (std::size_t i = 0; i < n; ++i) row[i] = q.mul(q.sub(row[i], t[i]), inv);
    }
    poly->truncate_rows(l);
  }
  out.level = l - 1;
  out.scale = ct.scale / static_cast<double>(ql.value());
  return out;
}

Ciphertext Evaluator::mod_drop(const Ciphertext& ct, std::size_t level) const {
  check(ct);
  if (level > ct.level) throw AlignmentError("mod_drop: target level above ciphertext level");
  Ciphertext out = ct;
  out.c0.truncate_rows(level + 1);
  out.c1.truncate_rows(level + 1);
  out.level = level;
  return out;
}

std::vector<long> Evaluator::rotation_plan(long steps, const GaloisKeys& keys) const {
  const long slots = static_cast<long>(ctx_->slot_count());
  long k = steps % slots;
  if (k < 0) k += slots;
  if (k == 0) return {};
  auto has = [&](long s) { return keys.count(s) > 0; };
  // Canonical key for a residue class modulo the slot count, if any.
  auto find_key = [&](long s) -> std::optional<long> {
    for (long c : {s, s - slots, s + slots}) {
      if (has(c)) return c;
    }
    return std::nullopt;
  };
  if (auto direct = find_key(k)) return {*direct};

  auto build = [&](bool naf) -> std::optional<std::vector<long>> {
    std::vector<long> plan;
    long rem = k;
    long bit = 1;
    while (rem != 0) {
      if (rem & 1) {
        long digit = 1;
        if (naf) digit = ((rem & 3) == 3) ? -1 : 1;
        auto key = find_key(digit * bit);
        if (!key) return std::nullopt;
        plan.push_back(*key);
        rem -= digit;
      }
      rem >>= 1;
      bit <<= 1;
    }
    return plan;
  };
  if (auto p = build(true)) return *p;
  if (auto p = build(false)) return *p;
  throw KeyError("no Galois key decomposition for rotation by " + std::to_string(steps));
}

Ciphertext Evaluator::rotate_single(const Ciphertext& ct, long step, const KSwitchKey& key) const {
  const CkksContext& ctx = *ctx_;
  const u64 g = ctx.galois_element(step);
  const auto mods = data_moduli(ct.level);
  RnsPoly c0 = ct.c0, c1 = ct.c1;
  poly_from_ntt(ctx, c0, mods);
  poly_from_ntt(ctx, c1, mods);
  RnsPoly r0, r1;
  apply_automorphism(ctx, c0, r0, g, mods);
  apply_automorphism(ctx, c1, r1, g, mods);
  poly_to_ntt(ctx, r0, mods);
  poly_to_ntt(ctx, r1, mods);
  auto [k0, k1] = key_switch(r1, ct.level, key);
  for (std::size_t r = 0; r <= ct.level; ++r) {
    const Modulus& q = ctx.modulus(r);
    for (std::size_t i = 0; i < r0.n; ++i) r0.row(r)[i] = q.add(r0.row(r)[i], k0.row(r)[i]);
  }
  Ciphertext out;
  out.c0 = std::move(r0);
  out.c1 = std::move(k1);
  out.scale = ct.scale;
  out.level = ct.level;
  out.params_digest = ct.params_digest;
  return out;
}

Ciphertext Evaluator::rotate(const Ciphertext& ct, long steps, const GaloisKeys& keys) const {
  check(ct);
  const auto plan = rotation_plan(steps, keys);
  Ciphertext out = ct;
  for (long s : plan) out = rotate_single(out, s, keys.at(s));
  return out;
}

}  // namespace splitfhe::he
