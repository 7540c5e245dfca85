#include "splitfhe/he/modarith.hpp"

#include <algorithm>

#include "splitfhe/error.hpp"

namespace splitfhe::he {

Modulus::Modulus(u64 value) : p_(value) {
  if (value < (u64{1} << 17) || value >= (u64{1} << 62)) {
    throw ParameterError("modulus " + std::to_string(value) + " outside supported range [2^17, 2^62)");
  }
  const u128 ratio = ~u128{0} / value;  // == floor(2^128 / p) for odd p
  ratio_hi_ = static_cast<u64>(ratio >> 64);
  ratio_lo_ = static_cast<u64>(ratio);
}

int Modulus::bit_count() const { return 64 - __builtin_clzll(p_); }

u64 Modulus::pow(u64 base, u64 exp) const {
  u64 result = 1 % p_;
  base = reduce(base);
  while (exp) {
    if (exp & 1) result = mul(result, base);
    base = mul(base, base);
    exp >>= 1;
  }
  return result;
}

u64 Modulus::inv(u64 a) const {
  a = reduce(a);
  if (a == 0) throw ParameterError("zero has no modular inverse");
  return pow(a, p_ - 2);
}

namespace {

u64 mulmod_slow(u64 a, u64 b, u64 m) { return static_cast<u64>(static_cast<u128>(a) * b % m); }

u64 powmod_slow(u64 a, u64 e, u64 m) {
  u64 r = 1;
  a %= m;
  while (e) {
    if (e & 1) r = mulmod_slow(r, a, m);
    a = mulmod_slow(a, a, m);
    e >>= 1;
  }
  return r;
}

}  // namespace

bool is_prime(u64 n) {
  if (n < 2) return false;
  for (u64 p : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    if (n % p == 0) return n == p;
  }
  u64 d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  // Deterministic witness set for all 64-bit n.
  for (u64 a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    u64 x = powmod_slow(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int r = 1; r < s; ++r) {
      x = mulmod_slow(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

u64 find_ntt_prime(int bits, std::size_t ring_degree, const std::vector<u64>& exclude) {
  if (bits < 20 || bits > 61) throw ParameterError("prime bit size must be in [20, 61]");
  const u64 step = 2 * static_cast<u64>(ring_degree);
  const u64 limit = u64{1} << bits;
  for (u64 candidate = limit + 1; candidate < 2 * limit; candidate += step) {
    if (std::find(exclude.begin(), exclude.end(), candidate) != exclude.end()) continue;
    if (is_prime(candidate)) return candidate;
  }
  throw ParameterError("no NTT-friendly prime of " + std::to_string(bits) + " bits");
}

u64 minimal_primitive_root(const Modulus& q, std::size_t two_n) {
  const u64 p = q.value();
  if ((p - 1) % two_n != 0) throw ParameterError("modulus is not 1 mod 2N");
  const u64 cofactor = (p - 1) / two_n;
  u64 best = 0;
  for (u64 x = 2; x < p; ++x) {
    const u64 g = q.pow(x, cofactor);
    if (q.pow(g, two_n / 2) == p - 1) {
      // Every primitive 2N-th root is g^k for odd k; take the smallest for reproducibility.
      u64 root = g;
      const u64 g2 = q.mul(g, g);
      best = g;
      for (std::size_t k = 3; k < two_n; k += 2) {
        root = q.mul(root, g2);
        best = std::min(best, root);
      }
      return best;
    }
  }
  throw ParameterError("no primitive 2N-th root of unity");
}

}  // namespace splitfhe::he
