#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "splitfhe/bytes.hpp"
#include "splitfhe/he/context.hpp"
#include "splitfhe/random.hpp"

namespace splitfhe::he {

inline constexpr double kErrorStddev = 3.2;

// Encoded message. Residues are kept in NTT form for primes 0..level.
struct PlaintextPoly {
  RnsPoly coeffs;
  double scale = 1.0;
  std::size_t level = 0;
  ParamsDigest params_digest{};
};

// RLWE ciphertext (c0, c1) with c0 + c1 * s ~ m. Both components are stored in
// NTT form over primes 0..level.
struct Ciphertext {
  RnsPoly c0;
  RnsPoly c1;
  double scale = 1.0;
  std::size_t level = 0;
  ParamsDigest params_digest{};

  bool operator==(const Ciphertext&) const = default;
};

struct SecretKey {
  ParamsDigest params_digest{};
  std::vector<std::int8_t> coeffs;  // ternary
  RnsPoly ntt;                      // all data primes + special prime
};

struct PublicKey {
  ParamsDigest params_digest{};
  RnsPoly b;  // -a*s + e, all data primes + special prime
  RnsPoly a;
};

// Hybrid key-switching key: one (b, a) pair per data prime ("digit"), each over
// all data primes plus the special prime.
struct KSwitchKey {
  std::vector<RnsPoly> b;
  std::vector<RnsPoly> a;

  std::size_t digit_count() const { return b.size(); }
};

using GaloisKeys = std::map<long, KSwitchKey>;

// Everything the server needs; never contains the secret key.
struct EvaluationKeys {
  ParamsDigest params_digest{};
  PublicKey public_key;
  KSwitchKey relin_key;
  GaloisKeys galois_keys;
};

struct KeyMaterial {
  SecretKey secret_key;
  std::shared_ptr<const EvaluationKeys> public_keys;
};

// Rotation steps covered by the default key set: +-2^j for j in [0, log2(N/2)).
std::vector<long> default_rotation_steps(std::size_t slot_count);

KeyMaterial keygen(const CkksContext& ctx, std::uint64_t seed);
KeyMaterial keygen(const CkksContext& ctx, std::uint64_t seed, std::span<const long> rotation_steps);

// Generates the Galois key for a single step; used by keygen and by callers
// that want to stream large key sets.
KSwitchKey make_galois_key(const CkksContext& ctx, const SecretKey& sk, long step, Prng& rng);

class Encoder {
 public:
  explicit Encoder(ContextPtr ctx) : ctx_(std::move(ctx)) {}

  // Packs up to N/2 reals into the slots (zero padded). The rounding error per
  // slot is bounded by (N/2) / (2 * scale) in the worst case; at N = 4096 and
  // scale 2^30 that is 2^-20.
  PlaintextPoly encode(std::span<const double> values, double scale, std::size_t level) const;
  PlaintextPoly encode(std::span<const double> values, double scale) const {
    return encode(values, scale, ctx_->max_level());
  }
  // Every slot holds `value`.
  PlaintextPoly encode_constant(double value, double scale, std::size_t level) const;

  std::vector<double> decode(const PlaintextPoly& pt) const;

  const CkksContext& context() const { return *ctx_; }

 private:
  ContextPtr ctx_;
};

Ciphertext encrypt(const CkksContext& ctx, const PlaintextPoly& pt, const PublicKey& pk, Prng& rng);
PlaintextPoly decrypt(const CkksContext& ctx, const Ciphertext& ct, const SecretKey& sk);

class Evaluator {
 public:
  explicit Evaluator(ContextPtr ctx) : ctx_(std::move(ctx)) {}

  Ciphertext add(const Ciphertext& a, const Ciphertext& b) const;
  Ciphertext sub(const Ciphertext& a, const Ciphertext& b) const;
  Ciphertext add_plain(const Ciphertext& ct, const PlaintextPoly& pt) const;
  void add_inplace(Ciphertext& a, const Ciphertext& b) const;

  // Product without rescale; the result scale is the product of the scales.
  Ciphertext mul_plain(const Ciphertext& ct, const PlaintextPoly& pt) const;
  Ciphertext mul(const Ciphertext& a, const Ciphertext& b, const KSwitchKey& relin_key) const;

  Ciphertext rescale(const Ciphertext& ct) const;
  // Drops primes down to `level` without changing the scale.
  Ciphertext mod_drop(const Ciphertext& ct, std::size_t level) const;

  // Left-rotates the slot vector by `steps` (negative = right).
  Ciphertext rotate(const Ciphertext& ct, long steps, const GaloisKeys& keys) const;

  // Power-of-two decomposition (non-adjacent form) of a rotation, using only
  // steps present in `keys`. Throws KeyError when no decomposition exists.
  std::vector<long> rotation_plan(long steps, const GaloisKeys& keys) const;

  const CkksContext& context() const { return *ctx_; }
  const ContextPtr& context_ptr() const { return ctx_; }

 private:
  void check(const Ciphertext& ct) const;
  // Returns (d * s_from) re-expressed under s, as two polys over primes 0..level.
  std::pair<RnsPoly, RnsPoly> key_switch(const RnsPoly& d_ntt, std::size_t level, const KSwitchKey& key) const;
  Ciphertext rotate_single(const Ciphertext& ct, long step, const KSwitchKey& key) const;

  ContextPtr ctx_;
};

// Ciphertext wire encoding: "SFC1" | digest[16] | level u8 | scale f64 | c0 | c1,
// residues as u64 LE in (prime, coefficient) order, NTT domain.
inline constexpr std::size_t kCiphertextHeaderBytes = 4 + 16 + 1 + 8;
std::size_t serialized_ciphertext_size(std::size_t ring_degree, std::size_t level);
Bytes serialize_ct(const Ciphertext& ct);
void serialize_ct(const Ciphertext& ct, ByteWriter& w);
Ciphertext deserialize_ct(std::span<const std::uint8_t> bytes, const CkksContext& ctx);
Ciphertext deserialize_ct(ByteReader& r, const CkksContext& ctx);

// Public key material (public, relinearization and Galois keys).
Bytes serialize_public_keys(const EvaluationKeys& keys);
std::size_t serialized_ksk_size(const KSwitchKey& key);
void serialize_ksk(const KSwitchKey& key, ByteWriter& w);
EvaluationKeys deserialize_public_keys(std::span<const std::uint8_t> bytes, const CkksContext& ctx);

Bytes serialize_secret_key(const SecretKey& sk);
SecretKey deserialize_secret_key(std::span<const std::uint8_t> bytes, const CkksContext& ctx);

}  // namespace splitfhe::he
