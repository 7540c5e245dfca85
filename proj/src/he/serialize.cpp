#include <cstring>

#include "splitfhe/error.hpp"
#include "splitfhe/he/ckks.hpp"

namespace splitfhe::he {

namespace {

constexpr std::string_view kCtMagic = "SFC1";
constexpr std::string_view kKeysMagic = "SFK1";
constexpr std::string_view kSecretMagic = "SFS1";

void put_digest(ByteWriter& w, const ParamsDigest& d) { w.put_bytes(d); }

ParamsDigest get_digest(ByteReader& r) {
  ParamsDigest d;
  auto s = r.take(d.size());
  std::memcpy(d.data(), s.data(), d.size());
  return d;
}

void expect_digest(ByteReader& r, const CkksContext& ctx) {
  if (get_digest(r) != ctx.digest()) throw ParameterError("serialized object belongs to different parameters");
}

void put_poly(ByteWriter& w, const RnsPoly& p) { w.put_u64s(p.data); }

// Reads `rows` rows and checks every residue against its prime.
RnsPoly get_poly(ByteReader& r, const CkksContext& ctx, std::span<const std::size_t> moduli) {
  RnsPoly p(ctx.ring_degree(), moduli.size());
  r.get_u64s(p.data);
  for (std::size_t row = 0; row < moduli.size(); ++row) {
    const u64 q = ctx.modulus(moduli[row]).value();
    for (std::size_t i = 0; i < p.n; ++i) {
      if (p.row(row)[i] >= q) throw FormatError("residue out of range");
    }
  }
  return p;
}

KSwitchKey get_ksk(ByteReader& r, const CkksContext& ctx) {
  const auto mods = data_and_special_moduli(ctx, ctx.max_level());
  KSwitchKey key;
  for (std::size_t j = 0; j < ctx.chain_length(); ++j) {
    key.b.push_back(get_poly(r, ctx, mods));
    key.a.push_back(get_poly(r, ctx, mods));
  }
  return key;
}

}  // namespace

std::size_t serialized_ciphertext_size(std::size_t ring_degree, std::size_t level) {
  return kCiphertextHeaderBytes + 2 * (level + 1) * ring_degree * sizeof(u64);
}

void serialize_ct(const Ciphertext& ct, ByteWriter& w) {
  if (ct.level > 255) throw ParameterError("level does not fit the wire format");
  w.put_magic(kCtMagic);
  put_digest(w, ct.params_digest);
  w.put_u8(static_cast<std::uint8_t>(ct.level));
  w.put_f64(ct.scale);
  put_poly(w, ct.c0);
  put_poly(w, ct.c1);
}

Bytes serialize_ct(const Ciphertext& ct) {
  ByteWriter w(serialized_ciphertext_size(ct.c0.n, ct.level));
  serialize_ct(ct, w);
  return w.take();
}

Ciphertext deserialize_ct(ByteReader& r, const CkksContext& ctx) {
  r.expect_magic(kCtMagic);
  Ciphertext ct;
  ct.params_digest = get_digest(r);
  if (ct.params_digest != ctx.digest()) throw ParameterError("ciphertext belongs to different parameters");
  ct.level = r.get_u8();
  if (ct.level > ctx.max_level()) throw FormatError("ciphertext level beyond the modulus chain");
  ct.scale = r.get_f64();
  if (!(ct.scale > 0.0)) throw FormatError("non-positive ciphertext scale");
  const auto mods = data_moduli(ct.level);
  ct.c0 = get_poly(r, ctx, mods);
  ct.c1 = get_poly(r, ctx, mods);
  return ct;
}

Ciphertext deserialize_ct(std::span<const std::uint8_t> bytes, const CkksContext& ctx) {
  ByteReader r(bytes);
  Ciphertext ct = deserialize_ct(r, ctx);
  r.expect_end();
  return ct;
}

std::size_t serialized_ksk_size(const KSwitchKey& key) {
  std::size_t total = 0;
  for (std::size_t j = 0; j < key.digit_count(); ++j) {
    total += (key.b[j].data.size() + key.a[j].data.size()) * sizeof(u64);
  }
  return total;
}

void serialize_ksk(const KSwitchKey& key, ByteWriter& w) {
  for (std::size_t j = 0; j < key.digit_count(); ++j) {
    put_poly(w, key.b[j]);
    put_poly(w, key.a[j]);
  }
}

Bytes serialize_public_keys(const EvaluationKeys& keys) {
  std::size_t total = 4 + 16 + (keys.public_key.b.data.size() + keys.public_key.a.data.size()) * 8 +
                      serialized_ksk_size(keys.relin_key) + 4;
  for (const auto& [step, key] : keys.galois_keys) total += 8 + serialized_ksk_size(key);
  ByteWriter w(total);
  w.put_magic(kKeysMagic);
  put_digest(w, keys.params_digest);
  put_poly(w, keys.public_key.b);
  put_poly(w, keys.public_key.a);
  serialize_ksk(keys.relin_key, w);
  w.put_u32(static_cast<std::uint32_t>(keys.galois_keys.size()));
  for (const auto& [step, key] : keys.galois_keys) {
    w.put_u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(step)));
    serialize_ksk(key, w);
  }
  return w.take();
}

EvaluationKeys deserialize_public_keys(std::span<const std::uint8_t> bytes, const CkksContext& ctx) {
  ByteReader r(bytes);
  r.expect_magic(kKeysMagic);
  expect_digest(r, ctx);
  EvaluationKeys keys;
  keys.params_digest = ctx.digest();
  keys.public_key.params_digest = ctx.digest();
  const auto mods = data_and_special_moduli(ctx, ctx.max_level());
  keys.public_key.b = get_poly(r, ctx, mods);
  keys.public_key.a = get_poly(r, ctx, mods);
  keys.relin_key = get_ksk(r, ctx);
  const std::uint32_t count = r.get_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto step = static_cast<long>(static_cast<std::int64_t>(r.get_u64()));
    keys.galois_keys.emplace(step, get_ksk(r, ctx));
  }
  r.expect_end();
  return keys;
}

Bytes serialize_secret_key(const SecretKey& sk) {
  ByteWriter w;
  w.put_magic(kSecretMagic);
  put_digest(w, sk.params_digest);
  w.put_u32(static_cast<std::uint32_t>(sk.coeffs.size()));
  for (auto c : sk.coeffs) w.put_u8(static_cast<std::uint8_t>(c));
  return w.take();
}

SecretKey deserialize_secret_key(std::span<const std::uint8_t> bytes, const CkksContext& ctx) {
  ByteReader r(bytes);
  r.expect_magic(kSecretMagic);
  expect_digest(r, ctx);
  const std::uint32_t n = r.get_u32();
  if (n != ctx.ring_degree()) throw FormatError("secret key ring degree mismatch");
  SecretKey sk;
  sk.params_digest = ctx.digest();
  sk.coeffs.resize(n);
  for (auto& c : sk.coeffs) {
    c = static_cast<std::int8_t>(r.get_u8());
    if (c < -1 || c > 1) throw FormatError("secret key is not ternary");
  }
  r.expect_end();
  const auto mods = data_and_special_moduli(ctx, ctx.max_level());
  sk.ntt = RnsPoly(n, mods.size());
  for (std::size_t row = 0; row < mods.size(); ++row) {
    const Modulus& q = ctx.modulus(mods[row]);
    for (std::size_t i = 0; i < n; ++i) sk.ntt.row(row)[i] = q.reduce_signed(sk.coeffs[i]);
  }
  poly_to_ntt(ctx, sk.ntt, mods);
  return sk;
}

}  // namespace splitfhe::he
