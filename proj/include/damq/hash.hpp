#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace damq {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// Incremental 64-bit FNV-1a.
class Fnv1a {
 public:
  Fnv1a& byte(std::uint8_t b) {
    state_ = (state_ ^ b) * kFnvPrime;
    return *this;
  }
  Fnv1a& bytes(std::span<const std::uint8_t> data) {
    for (auto b : data) byte(b);
    return *this;
  }
  Fnv1a& text(std::string_view s) {
    for (char c : s) byte(static_cast<std::uint8_t>(c));
    return *this;
  }
  // Little-endian, fixed width, so hashes are platform independent.
  Fnv1a& u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }
  Fnv1a& u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = kFnvOffset;
};

// FNV-1a style hash that consumes whole 64-bit words, with a splitmix64
// finalizer so the low bits depend on every input bit.
class WordHash {
 public:
  WordHash& add(std::uint64_t v) {
    state_ = (state_ ^ v) * kFnvPrime;
    state_ ^= state_ >> 32;
    return *this;
  }
  std::uint64_t value() const {
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_ = kFnvOffset;
};

inline std::uint64_t fnv1a(std::span<const std::uint8_t> data) { return Fnv1a{}.bytes(data).value(); }

}  // namespace damq
