#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bytesteady {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Error hierarchy. Everything thrown by the library derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed textual input (n-gram shorthand, TSV lines, FASTA headers).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary input (model, codec, dataset, compressed frames).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: model/feature mismatch, bad hyper-parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteView b) {
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

// Lexicographic byte order, shorter-is-smaller on common prefix.
inline bool lex_less(ByteView a, ByteView b) {
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  if (n != 0) {
    if (int c = std::memcmp(a.data(), b.data(), n); c != 0) return c < 0;
  }
  return a.size() < b.size();
}

namespace io {

// Little-endian primitive writers/readers used by every binary format.

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  std::array<char, sizeof(T)> buf;
  std::memcpy(buf.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf.begin(), buf.end());
  }
  out.write(buf.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  std::array<char, sizeof(T)> buf;
  if (!in.read(buf.data(), sizeof(T))) throw FormatError("unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf.begin(), buf.end());
  }
  T value;
  std::memcpy(&value, buf.data(), sizeof(T));
  return value;
}

template <typename T>
void write_le_array(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (const T& v : values) write_le(out, v);
  }
}

template <typename T>
void read_le_array(std::istream& in, std::span<T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size_bytes()))) {
      throw FormatError("unexpected end of stream");
    }
  } else {
    for (T& v : values) v = read_le<T>(in);
  }
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
  }
}

// Unsigned LEB128.
inline void write_varint(std::ostream& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.put(static_cast<char>((v & 0x7f) | 0x80));
    v >>= 7;
  }
  out.put(static_cast<char>(v));
}

inline std::uint64_t read_varint(std::istream& in) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    int c = in.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("truncated varint");
    v |= static_cast<std::uint64_t>(c & 0x7f) << shift;
    if ((c & 0x80) == 0) return v;
  }
  throw FormatError("varint too long");
}

inline void write_blob(std::ostream& out, ByteView b) {
  write_varint(out, b.size());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline Bytes read_blob(std::istream& in, std::uint64_t max_len = (1ull << 40)) {
  const std::uint64_t n = read_varint(in);
  if (n > max_len) throw FormatError("blob length out of range");
  Bytes b;
  // Grow in chunks so a corrupt length cannot trigger a huge allocation up front.
  constexpr std::uint64_t kChunk = 1 << 20;
  std::uint64_t done = 0;
  while (done < n) {
    const std::uint64_t step = (n - done) < kChunk ? (n - done) : kChunk;
    b.resize(done + step);
    if (!in.read(reinterpret_cast<char*>(b.data() + done), static_cast<std::streamsize>(step))) {
      throw FormatError("truncated blob");
    }
    done += step;
  }
  return b;
}

}  // namespace io
}  // namespace bytesteady
