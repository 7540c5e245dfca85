#include "splitfhe/he/context.hpp"

#include <cmath>
#include <numbers>

#include "splitfhe/error.hpp"

namespace splitfhe::he {

namespace {

std::size_t reverse_bits(std::size_t x, int bits) {
  std::size_t r = 0;
  for (int i = 0; i < bits; ++i) {
    r = (r << 1) | (x & 1);
    x >>= 1;
  }
  return r;
}

int log2_exact(std::size_t n) {
  int l = 0;
  while ((std::size_t{1} << l) < n) ++l;
  return l;
}

}  // namespace

NttTables::NttTables(const Modulus& q, std::size_t n) : q_(q), n_(n) {
  psi_ = minimal_primitive_root(q, 2 * n);
  const u64 psi_inv = q.inv(psi_);
  const int logn = log2_exact(n);
  psi_rev_.resize(n);
  psi_inv_rev_.resize(n);
  u64 pw = 1, pw_inv = 1;
  std::vector<u64> powers(n), inv_powers(n);
  for (std::size_t i = 0; i < n; ++i) {
    powers[i] = pw;
    inv_powers[i] = pw_inv;
    pw = q.mul(pw, psi_);
    pw_inv = q.mul(pw_inv, psi_inv);
  }
  psi_rev_shoup_.resize(n);
  psi_inv_rev_shoup_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = reverse_bits(i, logn);
    psi_rev_[i] = powers[r];
    psi_inv_rev_[i] = inv_powers[r];
    psi_rev_shoup_[i] = q.shoup(psi_rev_[i]);
    psi_inv_rev_shoup_[i] = q.shoup(psi_inv_rev_[i]);
  }
  n_inv_ = q.inv(n);
  n_inv_shoup_ = q.shoup(n_inv_);
}

void NttTables::forward(u64* a) const {
  const u64 p = q_.value();
  std::size_t t = n_;
  for (std::size_t m = 1; m < n_; m <<= 1) {
    t >>= 1;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j1 = 2 * i * t;
      const u64 w = psi_rev_[m + i];
      const u64 ws = psi_rev_shoup_[m + i];
      u64* x = a + j1;
      u64* y = x + t;
      for (std::size_t j = 0; j < t; ++j) {
        const u64 u = x[j];
        const u64 v = q_.mul_shoup(y[j], w, ws);
        const u64 s = u + v;
        x[j] = s >= p ? s - p : s;
        y[j] = u >= v ? u - v : u + p - v;
      }
    }
  }
}

void NttTables::inverse(u64* a) const {
  const u64 p = q_.value();
  std::size_t t = 1;
  for (std::size_t m = n_; m > 1; m >>= 1) {
    const std::size_t h = m >> 1;
    std::size_t j1 = 0;
    for (std::size_t i = 0; i < h; ++i) {
      const u64 w = psi_inv_rev_[h + i];
      const u64 ws = psi_inv_rev_shoup_[h + i];
      u64* x = a + j1;
      u64* y = x + t;
      for (std::size_t j = 0; j < t; ++j) {
        const u64 u = x[j];
        const u64 v = y[j];
        const u64 s = u + v;
        x[j] = s >= p ? s - p : s;
        y[j] = q_.mul_shoup(u >= v ? u - v : u + p - v, w, ws);
      }
      j1 += 2 * t;
    }
    t <<= 1;
  }
  for (std::size_t j = 0; j < n_; ++j) a[j] = q_.mul_shoup(a[j], n_inv_, n_inv_shoup_);
}

CkksContext::CkksContext(CkksParams params) : params_(std::move(params)) {
  params_.validate();
  digest_ = params_.digest();
  const std::size_t n = params_.ring_degree;
  const std::size_t L = params_.modulus_chain.size();
  for (u64 q : params_.modulus_chain) moduli_.emplace_back(q);
  moduli_.emplace_back(params_.special_prime);
  for (const auto& q : moduli_) ntt_.emplace_back(q, n);

  inv_q_.assign(L * L, 0);
  for (std::size_t d = 0; d < L; ++d) {
    for (std::size_t i = 0; i < d; ++i) inv_q_[d * L + i] = moduli_[i].inv(moduli_[d].value());
  }
  for (std::size_t i = 0; i < L; ++i) {
    special_mod_.push_back(moduli_[i].reduce(params_.special_prime));
    inv_special_.push_back(moduli_[i].inv(params_.special_prime));
  }

  const std::size_t m = 2 * n;
  rot_group_.resize(n / 2);
  std::size_t five_pow = 1;
  for (std::size_t j = 0; j < n / 2; ++j) {
    rot_group_[j] = five_pow;
    five_pow = (five_pow * 5) % m;
  }
  ksi_pows_.resize(m + 1);
  for (std::size_t j = 0; j <= m; ++j) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
    ksi_pows_[j] = {std::cos(angle), std::sin(angle)};
  }
}

u64 CkksContext::galois_element(long steps) const {
  const long slots = static_cast<long>(slot_count());
  long k = steps % slots;
  if (k < 0) k += slots;
  return rot_group_[static_cast<std::size_t>(k)];
}

ContextPtr make_context(const CkksParams& params) { return std::make_shared<const CkksContext>(params); }

std::vector<std::size_t> data_moduli(std::size_t level) {
  std::vector<std::size_t> m(level + 1);
  for (std::size_t i = 0; i <= level; ++i) m[i] = i;
  return m;
}

std::vector<std::size_t> data_and_special_moduli(const CkksContext& ctx, std::size_t level) {
  auto m = data_moduli(level);
  m.push_back(ctx.special_index());
  return m;
}

void poly_to_ntt(const CkksContext& ctx, RnsPoly& p, std::span<const std::size_t> moduli) {
  for (std::size_t r = 0; r < moduli.size(); ++r) ctx.ntt(moduli[r]).forward(p.row(r));
}

void poly_from_ntt(const CkksContext& ctx, RnsPoly& p, std::span<const std::size_t> moduli) {
  for (std::size_t r = 0; r < moduli.size(); ++r) ctx.ntt(moduli[r]).inverse(p.row(r));
}

RnsPoly mod_down_special(const CkksContext& ctx, const RnsPoly& acc, std::size_t level) {
  const std::size_t n = ctx.ring_degree();
  const Modulus& p = ctx.modulus(ctx.special_index());
  std::vector<u64> last(acc.row(level + 1), acc.row(level + 1) + n);
  ctx.ntt(ctx.special_index()).inverse(last.data());
  // (x - [x]_P) / P, with [x]_P taken centered.
  RnsPoly out(n, level + 1);
  std::vector<u64> t(n);
  for (std::size_t r = 0; r <= level; ++r) {
    const Modulus& q = ctx.modulus(r);
    for (std::size_t i = 0; i < n; ++i) t[i] = q.reduce_signed(p.centered(last[i]));
    ctx.ntt(r).forward(t.data());
    const u64 inv_p = ctx.inv_special_mod(r);
    const u64* a = acc.row(r);
    u64* o = out.row(r);
    for (std::size_t i = 0; i < n; ++i) o[i] = q.mul(q.sub(a[i], t[i]), inv_p);
  }
  return out;
}

void apply_automorphism(const CkksContext& ctx, const RnsPoly& in, RnsPoly& out, u64 galois_elt,
                        std::span<const std::size_t> moduli) {
  const std::size_t n = in.n;
  const std::size_t mask = 2 * n - 1;
  out = RnsPoly(n, in.rows);
  for (std::size_t r = 0; r < moduli.size(); ++r) {
    const Modulus& q = ctx.modulus(moduli[r]);
    const u64* src = in.row(r);
    u64* dst = out.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i * galois_elt) & mask;
      if (j < n) {
        dst[j] = src[i];
      } else {
        dst[j - n] = q.neg(src[i]);
      }
    }
  }
}

}  // namespace splitfhe::he
