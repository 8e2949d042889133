#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "psd/errors.hpp"

namespace psd::binio {

// Little-endian primitives for the packed dataset and checkpoint formats.

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline void write_f64_array(std::ostream& out, const double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_f64(out, data[i]);
  }
}

// Tracks the byte offset so format errors can report where parsing failed.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint64_t offset() const { return offset_; }

  void read_bytes(void* dst, std::size_t n, const std::string& what) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("truncated file while reading " + what, offset_);
    }
    offset_ += n;
  }

  std::uint32_t read_u32(const std::string& what) {
    unsigned char b[4];
    read_bytes(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t read_u64(const std::string& what) {
    unsigned char b[8];
    read_bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  double read_f64(const std::string& what) {
    std::uint64_t bits = read_u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void read_f64_array(double* dst, std::size_t n, const std::string& what) {
    if constexpr (std::endian::native == std::endian::little) {
      read_bytes(dst, n * 8, what);
    } else {
      for (std::size_t i = 0; i < n; ++i) dst[i] = read_f64(what);
    }
  }

  std::string read_string(std::size_t n, const std::string& what) {
    std::string s(n, '\0');
    read_bytes(s.data(), n, what);
    return s;
  }

  bool at_eof() {
    return in_.peek() == std::istream::traits_type::eof();
  }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace psd::binio
