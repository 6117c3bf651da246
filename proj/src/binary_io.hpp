#pragma once

// Little-endian scalar IO for the DPE1/DPR1 file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "relens/error.hpp"

namespace relens::detail {

template <typename T>
T to_little(T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 1);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) == 4) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
    std::memcpy(&value, &bits, 4);
  }
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ConfigError("truncated file while reading " + what);
  }
  return to_little(value);
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& path) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw ConfigError(path + ": bad magic, expected " + magic);
  }
}

}  // namespace relens::detail
