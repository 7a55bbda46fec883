// SPDX-License-Identifier: Apache-2.0
/**
 * @file   serialize.hpp
 * @brief  CFNT binary tensor files.
 *
 * Layout (little-endian): "CFNT", u32 version, u32 rank, rank x u32 extents,
 * then numel x f64 payload in row-major order.
 */
#ifndef CFNSR_SERIALIZE_HPP_
#define CFNSR_SERIALIZE_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace cfnsr {

inline constexpr char kCfntMagic[4] = {'C', 'F', 'N', 'T'};
inline constexpr std::uint32_t kCfntVersion = 1;

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T> T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T> void put(std::ostream &os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T> T get(std::istream &is) {
  T v{};
  if (!is.read(reinterpret_cast<char *>(&v), sizeof(T)))
    throw FormatError("cfnt: truncated stream");
  return to_little(v);
}

} // namespace detail

inline void write_cfnt(std::ostream &os, const Tensor &t) {
  os.write(kCfntMagic, 4);
  detail::put<std::uint32_t>(os, kCfntVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape())
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  for (double v : t.data())
    detail::put<double>(os, v);
  if (!os)
    throw FormatError("cfnt: write failed");
}

inline Tensor read_cfnt(std::istream &is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCfntMagic, 4) != 0)
    throw FormatError("cfnt: bad magic");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCfntVersion)
    throw FormatError("cfnt: unsupported version " + std::to_string(version));
  const auto rank = detail::get<std::uint32_t>(is);
  if (rank > 16)
    throw FormatError("cfnt: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto &e : shape) {
    e = detail::get<std::uint32_t>(is);
    if (e == 0)
      throw FormatError("cfnt: zero extent");
  }
  std::vector<double> values(numel(shape));
  for (double &v : values)
    v = detail::get<double>(is);
  return Tensor::from(std::move(shape), std::move(values));
}

inline void save_cfnt(const std::filesystem::path &path, const Tensor &t) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw FormatError("cfnt: cannot open " + path.string() + " for writing");
  write_cfnt(os, t);
}

inline Tensor load_cfnt(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw FormatError("cfnt: cannot open " + path.string());
  return read_cfnt(is);
}

} // namespace cfnsr

#endif // CFNSR_SERIALIZE_HPP_
