#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// 64-bit FNV-1a; pass the previous value as `h` to hash in pieces.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of dims and raw float bytes.
inline std::uint64_t tensor_hash(const Tensor& t, std::uint64_t h = kFnvOffset) {
  for (int d : t.dims()) h = fnv1a64(&d, sizeof d, h);
  return fnv1a64(t.data().data(), t.size() * sizeof(float), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace lesiongen
