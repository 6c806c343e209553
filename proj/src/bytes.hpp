#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <ostream>
#include <string_view>
#include <type_traits>

namespace vqctap::detail {

// Little-endian helpers; the on-disk formats are little-endian regardless of
// the host.
template <class T>
using bits_of = std::make_unsigned_t<std::conditional_t<
    std::is_floating_point_v<T>, std::conditional_t<sizeof(T) == 4, int32_t, int64_t>, T>>;

template <class T>
void put_le(std::ostream& out, T value) {
  bits_of<T> bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <class T>
T get_le(const unsigned char* p) {
  bits_of<T> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<bits_of<T>>(p[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;

// 64-bit FNV-1a, continuing from `h`.
inline uint64_t fnv1a64(const void* data, std::size_t size, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view text, uint64_t h = kFnvOffset) {
  return fnv1a64(text.data(), text.size(), h);
}

}  // namespace vqctap::detail
