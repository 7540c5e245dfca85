#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <complex>

#include "splitfhe/error.hpp"
#include "splitfhe/he/ckks.hpp"

namespace splitfhe::he {

namespace {

using cplx = std::complex<double>;
using boost::multiprecision::cpp_int;

void bit_reverse(std::vector<cplx>& v) {
  const std::size_t n = v.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(v[i], v[j]);
  }
}

// Evaluates the folded coefficient vector at the slot roots zeta^(5^j).
void fft_special(const CkksContext& ctx, std::vector<cplx>& vals) {
  const std::size_t size = vals.size();
  const std::size_t m = 2 * ctx.ring_degree();
  const auto& rot = ctx.rot_group();
  const auto& ksi = ctx.ksi_pows();
  bit_reverse(vals);
  for (std::size_t len = 2; len <= size; len <<= 1) {
    const std::size_t lenh = len >> 1;
    const std::size_t lenq = len << 2;
    for (std::size_t i = 0; i < size; i += len) {
      for (std::size_t j = 0; j < lenh; ++j) {
        const std::size_t idx = (rot[j] % lenq) * (m / lenq);
        const cplx u = vals[i + j];
        const cplx v = vals[i + j + lenh] * ksi[idx];
        vals[i + j] = u + v;
        vals[i + j + lenh] = u - v;
      }
    }
  }
}

void fft_special_inv(const CkksContext& ctx, std::vector<cplx>& vals) {
  const std::size_t size = vals.size();
  const std::size_t m = 2 * ctx.ring_degree();
  const auto& rot = ctx.rot_group();
  const auto& ksi = ctx.ksi_pows();
  for (std::size_t len = size; len >= 2; len >>= 1) {
    const std::size_t lenh = len >> 1;
    const std::size_t lenq = len << 2;
    for (std::size_t i = 0; i < size; i += len) {
      for (std::size_t j = 0; j < lenh; ++j) {
        const std::size_t idx = (lenq - (rot[j] % lenq)) * (m / lenq);
        const cplx u = vals[i + j] + vals[i + j + lenh];
        const cplx v = (vals[i + j] - vals[i + j + lenh]) * ksi[idx];
        vals[i + j] = u;
        vals[i + j + lenh] = v;
      }
    }
  }
  bit_reverse(vals);
  const double inv = 1.0 / static_cast<double>(size);
  for (auto& v : vals) v *= inv;
}

int modulus_bits(const CkksContext& ctx, std::size_t level) {
  int bits = 0;
  for (std::size_t i = 0; i <= level; ++i) bits += ctx.modulus(i).bit_count();
  return bits;
}

void write_coefficient(const CkksContext& ctx, RnsPoly& poly, std::size_t idx, double value, int q_bits) {
  const double r = std::nearbyint(value);
  if (!std::isfinite(r)) throw CapacityError("encoded value is not finite");
  const double mag = std::abs(r);
  if (mag >= std::ldexp(1.0, q_bits - 2)) {
    throw CapacityError("scaled value exceeds the ciphertext modulus at this level");
  }
  if (mag < std::ldexp(1.0, 62)) {
    const auto v = static_cast<std::int64_t>(r);
    for (std::size_t row = 0; row < poly.rows; ++row) poly.row(row)[idx] = ctx.modulus(row).reduce_signed(v);
    return;
  }
  int exp = 0;
  const double mant = std::frexp(mag, &exp);
  cpp_int big = static_cast<std::uint64_t>(std::ldexp(mant, 53));
  big <<= (exp - 53);
  for (std::size_t row = 0; row < poly.rows; ++row) {
    const u64 q = ctx.modulus(row).value();
    u64 res = static_cast<u64>(big % q);
    if (r < 0 && res != 0) res = q - res;
    poly.row(row)[idx] = res;
  }
}

}  // namespace

PlaintextPoly Encoder::encode(std::span<const double> values, double scale, std::size_t level) const {
  const CkksContext& ctx = *ctx_;
  const std::size_t slots = ctx.slot_count();
  if (values.size() > slots) {
    throw CapacityError("vector of length " + std::to_string(values.size()) + " exceeds " +
                        std::to_string(slots) + " slots");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ParameterError("encoding scale must be positive");
  if (level > ctx.max_level()) throw ParameterError("encoding level beyond the modulus chain");

  std::vector<cplx> u(slots, cplx{0.0, 0.0});
  for (std::size_t i = 0; i < values.size(); ++i) u[i] = values[i];
  fft_special_inv(ctx, u);

  PlaintextPoly pt;
  pt.scale = scale;
  pt.level = level;
  pt.params_digest = ctx.digest();
  pt.coeffs = RnsPoly(ctx.ring_degree(), level + 1);
  const int q_bits = modulus_bits(ctx, level);
  for (std::size_t i = 0; i < slots; ++i) {
    write_coefficient(ctx, pt.coeffs, i, u[i].real() * scale, q_bits);
    write_coefficient(ctx, pt.coeffs, i + slots, u[i].imag() * scale, q_bits);
  }
  const auto mods = data_moduli(level);
  poly_to_ntt(ctx, pt.coeffs, mods);
  return pt;
}

PlaintextPoly Encoder::encode_constant(double value, double scale, std::size_t level) const {
  const CkksContext& ctx = *ctx_;
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ParameterError("encoding scale must be positive");
  if (level > ctx.max_level()) throw ParameterError("encoding level beyond the modulus chain");
  PlaintextPoly pt;
  pt.scale = scale;
  pt.level = level;
  pt.params_digest = ctx.digest();
  pt.coeffs = RnsPoly(ctx.ring_degree(), level + 1);
  // A constant polynomial evaluates to the same value at every root, and its
  // NTT image is that constant in every position.
  RnsPoly c(ctx.ring_degree(), level + 1);
  write_coefficient(ctx, c, 0, value * scale, modulus_bits(ctx, level));
  for (std::size_t row = 0; row <= level; ++row) {
    std::fill_n(pt.coeffs.row(row), ctx.ring_degree(), c.row(row)[0]);
  }
  return pt;
}

std::vector<double> Encoder::decode(const PlaintextPoly& pt) const {
  const CkksContext& ctx = *ctx_;
  if (pt.params_digest != ctx.digest()) throw ParameterError("plaintext was produced under different parameters");
  if (pt.level > ctx.max_level() || pt.coeffs.rows != pt.level + 1 || pt.coeffs.n != ctx.ring_degree()) {
    throw ParameterError("plaintext shape does not match parameters");
  }
  const std::size_t n = ctx.ring_degree();
  const std::size_t slots = ctx.slot_count();
  RnsPoly coeffs = pt.coeffs;
  const auto mods = data_moduli(pt.level);
  poly_from_ntt(ctx, coeffs, mods);

  std::vector<double> c(n);
  if (pt.level == 0) {
    const Modulus& q = ctx.modulus(0);
    for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<double>(q.centered(coeffs.row(0)[i]));
  } else {
    const std::size_t rows = pt.level + 1;
    cpp_int big_q = 1;
    for (std::size_t r = 0; r < rows; ++r) big_q *= ctx.modulus(r).value();
    std::vector<cpp_int> q_hat(rows);
    std::vector<u64> q_hat_inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const Modulus& q = ctx.modulus(r);
      q_hat[r] = big_q / q.value();
      q_hat_inv[r] = q.inv(static_cast<u64>(q_hat[r] % q.value()));
    }
    const cpp_int half_q = big_q >> 1;
    cpp_int acc;
    for (std::size_t i = 0; i < n; ++i) {
      acc = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        acc += q_hat[r] * ctx.modulus(r).mul(coeffs.row(r)[i], q_hat_inv[r]);
      }
      acc %= big_q;
      if (acc > half_q) acc -= big_q;
      c[i] = acc.convert_to<double>();
    }
  }

  std::vector<cplx> u(slots);
  const double inv_scale = 1.0 / pt.scale;
  for (std::size_t i = 0; i < slots; ++i) u[i] = cplx{c[i] * inv_scale, c[i + slots] * inv_scale};
  fft_special(ctx, u);
  std::vector<double> out(slots);
  for (std::size_t i = 0; i < slots; ++i) out[i] = u[i].real();
  return out;
}

}  // namespace splitfhe::he
