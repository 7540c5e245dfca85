#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "splitfhe/he/modarith.hpp"

namespace splitfhe::he {

enum class SecurityProfile { Paper128, Desk, Custom };

std::string to_string(SecurityProfile p);
SecurityProfile parse_profile(const std::string& name);

using ParamsDigest = std::array<std::uint8_t, 16>;
std::string to_hex(const ParamsDigest& d);

// Leveled CKKS parameters.
//
// modulus_chain[0] is the base prime that remains after every rescale; the
// remaining primes are consumed one per rescale, so a fresh ciphertext sits at
// level modulus_chain.size() - 1 and the multiplicative depth budget equals
// that level. special_prime is only used inside key switching and never appears
// in a ciphertext.
struct CkksParams {
  std::size_t ring_degree = 0;
  std::vector<u64> modulus_chain;
  u64 special_prime = 0;
  double scale = 0.0;
  SecurityProfile security_profile = SecurityProfile::Custom;

  std::size_t slot_count() const { return ring_degree / 2; }
  std::size_t max_level() const { return modulus_chain.size() - 1; }
  std::size_t depth_budget() const { return max_level(); }

  // Throws ParameterError if an invariant is violated.
  void validate() const;
  ParamsDigest digest() const;

  // Builds a chain from bit sizes: bits[0] is the base prime, the rest are
  // rescaling primes in consumption order (last one is dropped first).
  static CkksParams from_bit_sizes(std::size_t ring_degree, const std::vector<int>& chain_bits,
                                   int special_bits, double scale,
                                   SecurityProfile profile = SecurityProfile::Custom);

  // 128-bit setting: N = 32768, scale 2^40, a 60-bit base prime, five 40-bit
  // rescaling primes and a 60-bit special prime (log QP = 320 bits). Depth 5.
  static CkksParams paper128();

  /// Desk-scale setting for tests and local benchmarks: N = 4096, scale 2^30,
  /// a 50-bit base prime, five 30-bit rescaling primes and a 60-bit special
  /// prime. Depth 5.
  ///
  /// NOT SECURE: log QP = 260 bits at N = 4096 is far beyond the 128-bit
  /// security bound for this ring degree. Use only for testing.
  static CkksParams desk();

  static CkksParams for_profile(SecurityProfile p);
};

}  // namespace splitfhe::he
