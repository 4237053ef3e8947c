#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "tua/error.hpp"
#include "tua/gcn.hpp"

namespace tua {

// Layout: 8 magic bytes, then d, h, C as little-endian int64, then w0 (d x h) and
// w1 (h x C) row-major as little-endian IEEE-754 doubles.
inline constexpr std::array<char, 8> kCheckpointMagic = {'T', 'U', 'A', 'G', 'C', 'N', '0', '1'};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  unsigned char buf[8];
  for (int k = 0; k < 8; ++k) buf[k] = static_cast<unsigned char>(bits >> (8 * k));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(sizeof(T) == 8);
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw ParseError("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
  T value;
  std::memcpy(&value, &bits, 8);
  return value;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const GcnParams& params) {
  params.validate();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_le<std::int64_t>(os, static_cast<std::int64_t>(params.num_features()));
  detail::write_le<std::int64_t>(os, static_cast<std::int64_t>(params.hidden_dim()));
  detail::write_le<std::int64_t>(os, static_cast<std::int64_t>(params.num_classes()));
  for (double w : params.w0.data()) detail::write_le<double>(os, w);
  for (double w : params.w1.data()) detail::write_le<double>(os, w);
}

inline GcnParams read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw ParseError("checkpoint: bad magic bytes");
  const auto d = detail::read_le<std::int64_t>(is);
  const auto h = detail::read_le<std::int64_t>(is);
  const auto c = detail::read_le<std::int64_t>(is);
  constexpr std::int64_t kMaxDim = std::int64_t{1} << 24;
  if (d <= 0 || h <= 0 || c <= 0 || d > kMaxDim || h > kMaxDim || c > kMaxDim)
    throw ParseError("checkpoint: implausible dimensions");
  GcnParams p{Matrix(static_cast<std::size_t>(d), static_cast<std::size_t>(h)),
              Matrix(static_cast<std::size_t>(h), static_cast<std::size_t>(c))};
  for (double& w : p.w0.data()) w = detail::read_le<double>(is);
  for (double& w : p.w1.data()) w = detail::read_le<double>(is);
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint: trailing bytes");
  p.validate();
  return p;
}

inline void save_checkpoint(const std::string& path, const GcnParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(os, params);
  if (!os) throw IoError("failed writing " + path);
}

inline GcnParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace tua
