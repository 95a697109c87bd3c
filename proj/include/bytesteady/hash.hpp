#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string_view>
#include <utility>

#include "bytesteady/bytes.hpp"

namespace bytesteady {

enum class HashVariant : std::uint8_t { kFnv1a64 = 0, kCity64 = 1 };

inline std::string_view hash_variant_name(HashVariant v) {
  return v == HashVariant::kFnv1a64 ? "fnv1a64" : "city64";
}

inline std::optional<HashVariant> parse_hash_variant(std::string_view s) {
  if (s == "fnv1a64" || s == "fnv") return HashVariant::kFnv1a64;
  if (s == "city64" || s == "city") return HashVariant::kCity64;
  return std::nullopt;
}

// 64-bit FNV-1a with the canonical offset basis and prime, unseeded.
constexpr std::uint64_t fnv1a64(ByteView data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace city_detail {

// CityHash64 v1.1 (the revision shipped with Abseil). Little-endian loads
// regardless of host byte order, so values are platform independent.

constexpr std::uint64_t k0 = 0xc3a5c85c97cb3127ull;
constexpr std::uint64_t k1 = 0xb492b66fbe98f273ull;
constexpr std::uint64_t k2 = 0x9ae16a3b2f90404full;

inline std::uint64_t fetch64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint32_t fetch32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t rotate(std::uint64_t v, int shift) {
  return shift == 0 ? v : ((v >> shift) | (v << (64 - shift)));
}

inline std::uint64_t shift_mix(std::uint64_t v) { return v ^ (v >> 47); }

inline std::uint64_t bswap64(std::uint64_t v) { return __builtin_bswap64(v); }

inline std::uint64_t hash_len16(std::uint64_t u, std::uint64_t v, std::uint64_t mul) {
  std::uint64_t a = (u ^ v) * mul;
  a ^= (a >> 47);
  std::uint64_t b = (v ^ a) * mul;
  b ^= (b >> 47);
  b *= mul;
  return b;
}

inline std::uint64_t hash_len16(std::uint64_t u, std::uint64_t v) {
  return hash_len16(u, v, 0x9ddfea08eb382d69ull);
}

inline std::uint64_t hash_len0to16(const std::uint8_t* s, std::size_t len) {
  if (len >= 8) {
    const std::uint64_t mul = k2 + len * 2;
    const std::uint64_t a = fetch64(s) + k2;
    const std::uint64_t b = fetch64(s + len - 8);
    const std::uint64_t c = rotate(b, 37) * mul + a;
    const std::uint64_t d = (rotate(a, 25) + b) * mul;
    return hash_len16(c, d, mul);
  }
  if (len >= 4) {
    const std::uint64_t mul = k2 + len * 2;
    const std::uint64_t a = fetch32(s);
    return hash_len16(len + (a << 3), fetch32(s + len - 4), mul);
  }
  if (len > 0) {
    const std::uint8_t a = s[0];
    const std::uint8_t b = s[len >> 1];
    const std::uint8_t c = s[len - 1];
    const std::uint32_t y = static_cast<std::uint32_t>(a) + (static_cast<std::uint32_t>(b) << 8);
    const std::uint32_t z = static_cast<std::uint32_t>(len) + (static_cast<std::uint32_t>(c) << 2);
    return shift_mix(y * k2 ^ z * k0) * k2;
  }
  return k2;
}

inline std::uint64_t hash_len17to32(const std::uint8_t* s, std::size_t len) {
  const std::uint64_t mul = k2 + len * 2;
  const std::uint64_t a = fetch64(s) * k1;
  const std::uint64_t b = fetch64(s + 8);
  const std::uint64_t c = fetch64(s + len - 8) * mul;
  const std::uint64_t d = fetch64(s + len - 16) * k2;
  return hash_len16(rotate(a + b, 43) + rotate(c, 30) + d, a + rotate(b + k2, 18) + c, mul);
}

inline std::pair<std::uint64_t, std::uint64_t> weak_hash_len32(std::uint64_t w, std::uint64_t x,
                                                               std::uint64_t y, std::uint64_t z,
                                                               std::uint64_t a, std::uint64_t b) {
  a += w;
  b = rotate(b + a + z, 21);
  const std::uint64_t c = a;
  a += x;
  a += y;
  b += rotate(a, 44);
  return {a + z, b + c};
}

inline std::pair<std::uint64_t, std::uint64_t> weak_hash_len32(const std::uint8_t* s,
                                                               std::uint64_t a, std::uint64_t b) {
  return weak_hash_len32(fetch64(s), fetch64(s + 8), fetch64(s + 16), fetch64(s + 24), a, b);
}

inline std::uint64_t hash_len33to64(const std::uint8_t* s, std::size_t len) {
  const std::uint64_t mul = k2 + len * 2;
  std::uint64_t a = fetch64(s) * k2;
  std::uint64_t b = fetch64(s + 8);
  const std::uint64_t c = fetch64(s + len - 24);
  const std::uint64_t d = fetch64(s + len - 32);
  const std::uint64_t e = fetch64(s + 16) * k2;
  const std::uint64_t f = fetch64(s + 24) * 9;
  const std::uint64_t g = fetch64(s + len - 8);
  const std::uint64_t h = fetch64(s + len - 16) * mul;
  const std::uint64_t u = rotate(a + g, 43) + (rotate(b, 30) + c) * 9;
  const std::uint64_t v = ((a + g) ^ d) + f + 1;
  const std::uint64_t w = bswap64((u + v) * mul) + h;
  const std::uint64_t x = rotate(e + f, 42) + c;
  const std::uint64_t y = (bswap64((v + w) * mul) + g) * mul;
  const std::uint64_t z = e + f + c;
  a = bswap64((x + z) * mul + y) + b;
  b = shift_mix((z + a) * mul + d + h) * mul;
  return b + x;
}

}  // namespace city_detail

inline std::uint64_t city64(ByteView data) {
  using namespace city_detail;
  const std::uint8_t* s = data.data();
  std::size_t len = data.size();
  if (len <= 16) return hash_len0to16(s, len);
  if (len <= 32) return hash_len17to32(s, len);
  if (len <= 64) return hash_len33to64(s, len);

  std::uint64_t x = fetch64(s + len - 40);
  std::uint64_t y = fetch64(s + len - 16) + fetch64(s + len - 56);
  std::uint64_t z = hash_len16(fetch64(s + len - 48) + len, fetch64(s + len - 24));
  auto v = weak_hash_len32(s + len - 64, len, z);
  auto w = weak_hash_len32(s + len - 32, y + k1, x);
  x = x * k1 + fetch64(s);

  len = (len - 1) & ~static_cast<std::size_t>(63);
  do {
    x = rotate(x + y + v.first + fetch64(s + 8), 37) * k1;
    y = rotate(y + v.second + fetch64(s + 48), 42) * k1;
    x ^= w.second;
    y += v.first + fetch64(s + 40);
    z = rotate(z + w.first, 33) * k1;
    v = weak_hash_len32(s, v.second * k1, x + w.first);
    w = weak_hash_len32(s + 32, z + w.second, y + fetch64(s + 16));
    std::swap(z, x);
    s += 64;
    len -= 64;
  } while (len != 0);
  return hash_len16(hash_len16(v.first, w.first) + shift_mix(y) * k1 + z,
                    hash_len16(v.second, w.second) + x);
}

inline std::uint64_t hash_bytes(HashVariant variant, ByteView data) {
  return variant == HashVariant::kFnv1a64 ? fnv1a64(data) : city64(data);
}

}  // namespace bytesteady
