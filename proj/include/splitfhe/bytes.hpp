#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitfhe/error.hpp"

namespace splitfhe {

static_assert(std::endian::native == std::endian::little,
              "wire formats are little-endian; bulk copies assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

// Append-only little-endian encoder shared by every binary format.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v) { put_raw(&v, sizeof v); }
  void put_u32(std::uint32_t v) { put_raw(&v, sizeof v); }
  void put_u64(std::uint64_t v) { put_raw(&v, sizeof v); }
  void put_i32(std::int32_t v) { put_raw(&v, sizeof v); }
  void put_f64(double v) { put_raw(&v, sizeof v); }
  void put_magic(std::string_view magic) { put_raw(magic.data(), magic.size()); }
  void put_bytes(std::span<const std::uint8_t> b) { put_raw(b.data(), b.size()); }
  void put_u64s(std::span<const std::uint64_t> v) { put_raw(v.data(), v.size_bytes()); }
  void put_f32s(std::span<const float> v) { put_raw(v.data(), v.size_bytes()); }
  // Length-prefixed (u64) blob.
  void put_blob(std::span<const std::uint8_t> b) {
    put_u64(b.size());
    put_bytes(b);
  }

  std::size_t size() const { return buf_.size(); }
  Bytes take() { return std::move(buf_); }
  const Bytes& bytes() const { return buf_; }

 private:
  void put_raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  Bytes buf_;
};

// Bounds-checked reader; every overrun raises FormatError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t get_u8() { return get<std::uint8_t>(); }
  std::uint16_t get_u16() { return get<std::uint16_t>(); }
  std::uint32_t get_u32() { return get<std::uint32_t>(); }
  std::uint64_t get_u64() { return get<std::uint64_t>(); }
  std::int32_t get_i32() { return get<std::int32_t>(); }
  double get_f64() { return get<double>(); }

  void expect_magic(std::string_view magic) {
    auto got = take(magic.size());
    if (std::memcmp(got.data(), magic.data(), magic.size()) != 0) {
      throw FormatError("bad magic: expected '" + std::string(magic) + "'");
    }
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) {
      throw FormatError("truncated buffer: need " + std::to_string(n) + " bytes, have " +
                        std::to_string(remaining()));
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void get_u64s(std::span<std::uint64_t> out) {
    auto s = take(out.size_bytes());
    std::memcpy(out.data(), s.data(), s.size());
  }
  void get_f32s(std::span<float> out) {
    auto s = take(out.size_bytes());
    std::memcpy(out.data(), s.data(), s.size());
  }
  std::span<const std::uint8_t> get_blob() {
    auto n = get_u64();
    return take(n);
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError("trailing bytes: " + std::to_string(remaining()));
    }
  }

 private:
  template <typename T>
  T get() {
    T v;
    auto s = take(sizeof(T));
    std::memcpy(&v, s.data(), sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// True when needle occurs as a contiguous subsequence of haystack.
bool contains_bytes(std::span<const std::uint8_t> haystack, std::span<const std::uint8_t> needle);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace splitfhe
