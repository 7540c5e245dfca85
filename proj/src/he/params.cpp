#include "splitfhe/he/params.hpp"

#include <sodium.h>

#include <algorithm>
#include <cmath>

#include "splitfhe/bytes.hpp"
#include "splitfhe/error.hpp"

namespace splitfhe::he {

std::string to_string(SecurityProfile p) {
  switch (p) {
    case SecurityProfile::Paper128:
      return "paper128";
    case SecurityProfile::Desk:
      return "desk";
    case SecurityProfile::Custom:
      return "custom";
  }
  return "custom";
}

SecurityProfile parse_profile(const std::string& name) {
  if (name == "paper128") return SecurityProfile::Paper128;
  if (name == "desk") return SecurityProfile::Desk;
  throw ParameterError("unknown profile '" + name + "' (expected desk or paper128)");
}

std::string to_hex(const ParamsDigest& d) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : d) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

void CkksParams::validate() const {
  if (ring_degree < 8 || (ring_degree & (ring_degree - 1)) != 0) {
    throw ParameterError("ring_degree must be a power of two >= 8, got " + std::to_string(ring_degree));
  }
  if (modulus_chain.empty()) throw ParameterError("modulus chain is empty");
  if (modulus_chain.size() > 255) throw ParameterError("modulus chain longer than 255 primes");
  std::vector<u64> all = modulus_chain;
  all.push_back(special_prime);
  for (u64 q : all) {
    if (q < (u64{1} << 20) || q >= (u64{1} << 62)) {
      throw ParameterError("modulus " + std::to_string(q) + " outside [2^20, 2^62)");
    }
    if (q % (2 * ring_degree) != 1) {
      throw ParameterError("modulus " + std::to_string(q) + " is not 1 mod 2N (not NTT-friendly)");
    }
    if (!is_prime(q)) throw ParameterError("modulus " + std::to_string(q) + " is not prime");
  }
  auto sorted = all;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ParameterError("moduli must be distinct");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ParameterError("scale must be positive");
  const u64 smallest = *std::min_element(modulus_chain.begin(), modulus_chain.end());
  if (scale >= static_cast<double>(smallest)) {
    throw ParameterError("scale must be smaller than every modulus prime");
  }
  if (security_profile == SecurityProfile::Paper128 && (ring_degree != 32768 || scale != std::ldexp(1.0, 40))) {
    throw ParameterError("Paper128 profile requires ring_degree 32768 and scale 2^40");
  }
}

ParamsDigest CkksParams::digest() const {
  ByteWriter w;
  w.put_magic("CKKSPARAMS");
  w.put_u64(ring_degree);
  w.put_u64(modulus_chain.size());
  for (u64 q : modulus_chain) w.put_u64(q);
  w.put_u64(special_prime);
  w.put_f64(scale);
  ParamsDigest d{};
  crypto_generichash(d.data(), d.size(), w.bytes().data(), w.size(), nullptr, 0);
  return d;
}

CkksParams CkksParams::from_bit_sizes(std::size_t ring_degree, const std::vector<int>& chain_bits,
                                      int special_bits, double scale, SecurityProfile profile) {
  CkksParams p;
  p.ring_degree = ring_degree;
  p.scale = scale;
  p.security_profile = profile;
  std::vector<u64> taken;
  for (int b : chain_bits) {
    u64 q = find_ntt_prime(b, ring_degree, taken);
    taken.push_back(q);
    p.modulus_chain.push_back(q);
  }
  p.special_prime = find_ntt_prime(special_bits, ring_degree, taken);
  p.validate();
  return p;
}

CkksParams CkksParams::paper128() {
  return from_bit_sizes(32768, {60, 40, 40, 40, 40, 40}, 60, std::ldexp(1.0, 40), SecurityProfile::Paper128);
}

CkksParams CkksParams::desk() {
  return from_bit_sizes(4096, {50, 30, 30, 30, 30, 30}, 60, std::ldexp(1.0, 30), SecurityProfile::Desk);
}

CkksParams CkksParams::for_profile(SecurityProfile p) {
  switch (p) {
    case SecurityProfile::Paper128:
      return paper128();
    case SecurityProfile::Desk:
      return desk();
    case SecurityProfile::Custom:
      break;
  }
  throw ParameterError("custom profile has no preset parameters");
}

}  // namespace splitfhe::he
