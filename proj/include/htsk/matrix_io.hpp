#pragma once

#include "htsk/linalg.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace htsk {

// Binary matrix file, all integers little-endian:
//   magic   "HTSK"           4 bytes
//   version u32              (1)
//   m       u64
//   n       u64
//   dtype   "f64\0"          4 bytes
//   payload m*n IEEE-754 binary64, column-major
inline constexpr std::uint32_t kMatrixFormatVersion = 1;

// File-system failure (cannot open, cannot write).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};
inline constexpr std::array<char, 4> kMatrixMagic{'H', 'T', 'S', 'K'};
inline constexpr std::array<char, 4> kDtypeF64{'f', '6', '4', '\0'};

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  auto u = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw std::runtime_error("truncated matrix file");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(u);
}

}  // namespace detail

inline void write_matrix_binary(std::ostream& os, const Matrix& a) {
  os.write(kMatrixMagic.data(), 4);
  detail::put_le<std::uint32_t>(os, kMatrixFormatVersion);
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(a.rows()));
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(a.cols()));
  os.write(kDtypeF64.data(), 4);
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) detail::put_le<double>(os, a(i, j));
  if (!os) throw IoError("failed to write matrix");
}

inline Matrix read_matrix_binary(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMatrixMagic) throw std::runtime_error("not an HTSK matrix file");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kMatrixFormatVersion)
    throw std::runtime_error("unsupported matrix format version " + std::to_string(version));
  const auto m = detail::get_le<std::uint64_t>(is);
  const auto n = detail::get_le<std::uint64_t>(is);
  std::array<char, 4> dtype{};
  if (!is.read(dtype.data(), 4) || dtype != kDtypeF64) throw std::runtime_error("unsupported matrix dtype");
  if (static_cast<double>(m) * static_cast<double>(n) > 1e8) throw std::runtime_error("matrix too large");
  Matrix a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = detail::get_le<double>(is);
  return a;
}

inline void write_matrix_binary(const std::string& path, const Matrix& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path);
  write_matrix_binary(os, a);
}

inline Matrix read_matrix_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_matrix_binary(is);
}

// %.17g round-trips every binary64 value.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// One row per matrix row, no header.
inline void write_matrix_csv(std::ostream& os, const Matrix& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (j) os << ',';
      os << format_double(a(i, j));
    }
    os << "\r\n";
  }
}

}  // namespace htsk
