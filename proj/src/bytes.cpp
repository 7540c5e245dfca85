#include "splitfhe/bytes.hpp"

#include <algorithm>
#include <functional>
#include <fstream>
#include <iterator>

namespace splitfhe {

bool contains_bytes(std::span<const std::uint8_t> haystack, std::span<const std::uint8_t> needle) {
  if (needle.empty()) return true;
  auto it = std::search(haystack.begin(), haystack.end(),
                        std::boyer_moore_horspool_searcher(needle.begin(), needle.end()));
  return it != haystack.end();
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace splitfhe
