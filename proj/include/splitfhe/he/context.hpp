#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

#include "splitfhe/he/modarith.hpp"
#include "splitfhe/he/params.hpp"

namespace splitfhe::he {

// Negacyclic NTT over Z_q[X]/(X^N + 1). Forward output is in bit-reversed
// order; inverse consumes that order and returns natural-order coefficients.
class NttTables {
 public:
  NttTables(const Modulus& q, std::size_t n);

  void forward(u64* a) const;
  void inverse(u64* a) const;

  const Modulus& modulus() const { return q_; }
  std::size_t size() const { return n_; }
  u64 root() const { return psi_; }

 private:
  Modulus q_;
  std::size_t n_;
  u64 psi_;
  std::vector<u64> psi_rev_, psi_rev_shoup_;
  std::vector<u64> psi_inv_rev_, psi_inv_rev_shoup_;
  u64 n_inv_, n_inv_shoup_;
};

// Residue matrix: one row of ring_degree coefficients per prime. Which prime a
// row belongs to is fixed by the owner (ciphertexts: data primes 0..level;
// key-switching material: all data primes followed by the special prime).
struct RnsPoly {
  std::size_t n = 0;
  std::size_t rows = 0;
  std::vector<u64> data;

  RnsPoly() = default;
  RnsPoly(std::size_t ring_degree, std::size_t row_count)
      : n(ring_degree), rows(row_count), data(ring_degree * row_count, 0) {}

  u64* row(std::size_t i) { return data.data() + i * n; }
  const u64* row(std::size_t i) const { return data.data() + i * n; }
  std::span<u64> row_span(std::size_t i) { return {row(i), n}; }
  std::span<const u64> row_span(std::size_t i) const { return {row(i), n}; }

  // Keeps the first `count` rows.
  void truncate_rows(std::size_t count) {
    rows = count;
    data.resize(n * count);
  }
  bool operator==(const RnsPoly&) const = default;
};

// Immutable per-parameter-set precomputation shared by every CKKS operation.
// Modulus index i < L addresses modulus_chain[i]; index L is the special prime.
class CkksContext {
 public:
  explicit CkksContext(CkksParams params);

  const CkksParams& params() const { return params_; }
  const ParamsDigest& digest() const { return digest_; }
  std::size_t ring_degree() const { return params_.ring_degree; }
  std::size_t slot_count() const { return params_.slot_count(); }
  std::size_t max_level() const { return params_.max_level(); }
  std::size_t chain_length() const { return params_.modulus_chain.size(); }
  std::size_t special_index() const { return chain_length(); }

  const Modulus& modulus(std::size_t i) const { return moduli_[i]; }
  const NttTables& ntt(std::size_t i) const { return ntt_[i]; }

  // q_dropped^{-1} mod q_i, for i < dropped.
  u64 inv_q_mod(std::size_t dropped, std::size_t i) const { return inv_q_[dropped * chain_length() + i]; }
  u64 inv_special_mod(std::size_t i) const { return inv_special_[i]; }
  u64 special_mod(std::size_t i) const { return special_mod_[i]; }

  // Canonical embedding helpers: slot j evaluates at zeta^(5^j), zeta = exp(i*pi/N).
  const std::vector<std::size_t>& rot_group() const { return rot_group_; }
  const std::vector<std::complex<double>>& ksi_pows() const { return ksi_pows_; }

  // Galois element realising a left rotation of the slot vector by `steps`.
  u64 galois_element(long steps) const;

 private:
  CkksParams params_;
  ParamsDigest digest_;
  std::vector<Modulus> moduli_;
  std::vector<NttTables> ntt_;
  std::vector<u64> inv_q_;
  std::vector<u64> inv_special_;
  std::vector<u64> special_mod_;
  std::vector<std::size_t> rot_group_;
  std::vector<std::complex<double>> ksi_pows_;
};

using ContextPtr = std::shared_ptr<const CkksContext>;
ContextPtr make_context(const CkksParams& params);

// Polynomial helpers over a set of consecutive modulus indices [0, rows) or an
// explicit index list.
void poly_to_ntt(const CkksContext& ctx, RnsPoly& p, std::span<const std::size_t> moduli);
void poly_from_ntt(const CkksContext& ctx, RnsPoly& p, std::span<const std::size_t> moduli);
std::vector<std::size_t> data_moduli(std::size_t level);          // {0..level}
std::vector<std::size_t> data_and_special_moduli(const CkksContext& ctx, std::size_t level);

// Divides an NTT-form polynomial over primes 0..level plus the special prime
// (last row) by the special prime with rounding; returns rows 0..level.
RnsPoly mod_down_special(const CkksContext& ctx, const RnsPoly& acc, std::size_t level);

// Applies X -> X^g to a polynomial in coefficient form.
void apply_automorphism(const CkksContext& ctx, const RnsPoly& in, RnsPoly& out, u64 galois_elt,
                        std::span<const std::size_t> moduli);

}  // namespace splitfhe::he
