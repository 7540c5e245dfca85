#pragma once

#include <cstdint>
#include <vector>

namespace splitfhe::he {

using u64 = std::uint64_t;
using u128 = unsigned __int128;

// Word-sized prime modulus with a precomputed Barrett constant.
// Values must stay below 2^62 so that lazy sums of two residues never wrap.
class Modulus {
 public:
  Modulus() = default;
  explicit Modulus(u64 value);

  u64 value() const { return p_; }
  int bit_count() const;

  // x < p^2
  u64 reduce(u128 x) const {
    const u64 x0 = static_cast<u64>(x);
    const u64 x1 = static_cast<u64>(x >> 64);
    const u128 c0 = (static_cast<u128>(x0) * ratio_lo_) >> 64;
    const u128 s = static_cast<u128>(x0) * ratio_hi_ + static_cast<u128>(x1) * ratio_lo_ + c0;
    const u64 q = x1 * ratio_hi_ + static_cast<u64>(s >> 64);
    u64 r = x0 - q * p_;
    while (r >= p_) r -= p_;
    return r;
  }
  u64 reduce(u64 x) const { return x >= p_ ? x % p_ : x; }
  u64 reduce_signed(std::int64_t x) const {
    if (x >= 0) return reduce(static_cast<u64>(x));
    const u64 m = reduce(static_cast<u64>(-(x + 1)) + 1);
    return m == 0 ? 0 : p_ - m;
  }

  u64 add(u64 a, u64 b) const {
    const u64 s = a + b;
    return s >= p_ ? s - p_ : s;
  }
  u64 sub(u64 a, u64 b) const { return a >= b ? a - b : a + p_ - b; }
  u64 neg(u64 a) const { return a == 0 ? 0 : p_ - a; }
  u64 mul(u64 a, u64 b) const { return reduce(static_cast<u128>(a) * b); }
  u64 pow(u64 base, u64 exp) const;
  u64 inv(u64 a) const;

  // Shoup precomputation floor(w * 2^64 / p) for a fixed multiplicand w < p.
  u64 shoup(u64 w) const { return static_cast<u64>((static_cast<u128>(w) << 64) / p_); }
  u64 mul_shoup(u64 x, u64 w, u64 w_shoup) const {
    const u64 q = static_cast<u64>((static_cast<u128>(x) * w_shoup) >> 64);
    const u64 r = x * w - q * p_;
    return r >= p_ ? r - p_ : r;
  }

  // Maps a residue to the symmetric interval (-p/2, p/2].
  std::int64_t centered(u64 a) const {
    return a > (p_ >> 1) ? static_cast<std::int64_t>(a) - static_cast<std::int64_t>(p_)
                         : static_cast<std::int64_t>(a);
  }

  bool operator==(const Modulus& o) const { return p_ == o.p_; }

 private:
  u64 p_ = 0;
  u64 ratio_hi_ = 0;  // floor(2^128 / p), high word
  u64 ratio_lo_ = 0;  // low word
};

bool is_prime(u64 n);

// Distinct primes p == 1 (mod 2 * ring_degree), scanning upward from 2^bits.
// `exclude` lists primes already taken by other positions of the chain.
u64 find_ntt_prime(int bits, std::size_t ring_degree, const std::vector<u64>& exclude);

// Generator of the order-2N subgroup: psi^N == -1 (mod p). Smallest such value.
u64 minimal_primitive_root(const Modulus& q, std::size_t two_n);

}  // namespace splitfhe::he
