#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>

namespace gem::detail {

inline void write_f64_le(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char buf[8];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(buf, 8);
    }
  }
}

inline void read_f64_le(std::istream& in, std::span<double> values) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if constexpr (std::endian::native != std::endian::little) {
    for (double& v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      std::uint64_t swapped = 0;
      for (int i = 0; i < 8; ++i) swapped |= ((bits >> (8 * i)) & 0xff) << (8 * (7 - i));
      v = std::bit_cast<double>(swapped);
    }
  }
}

}  // namespace gem::detail
