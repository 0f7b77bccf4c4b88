#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "ovocc/error.hpp"

// Little-endian primitives shared by the OLK1 / OVX1 / OVE1 containers.
namespace ovocc::binio {

template <class UInt>
void put_uint(std::ostream& os, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <class UInt>
UInt get_uint(std::istream& is) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw Error(ErrorCode::kFormat, "unexpected end of file");
    v |= static_cast<UInt>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_uint<std::uint8_t>(os, v); }
inline void put_u16(std::ostream& os, std::uint16_t v) { put_uint<std::uint16_t>(os, v); }
inline void put_u32(std::ostream& os, std::uint32_t v) { put_uint<std::uint32_t>(os, v); }
inline void put_f32(std::ostream& os, float v) { put_uint<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_uint<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v)); }
inline std::uint8_t get_u8(std::istream& is) { return get_uint<std::uint8_t>(is); }
inline std::uint16_t get_u16(std::istream& is) { return get_uint<std::uint16_t>(is); }
inline std::uint32_t get_u32(std::istream& is) { return get_uint<std::uint32_t>(is); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_uint<std::uint32_t>(is)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw Error(ErrorCode::kFormat, "string length out of bounds");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (static_cast<std::uint32_t>(is.gcount()) != n) throw Error(ErrorCode::kFormat, "truncated string");
  return s;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4] = {};
  is.read(buf, 4);
  if (is.gcount() != 4 || std::string(buf, 4) != std::string(magic, 4)) {
    throw Error(ErrorCode::kFormat, std::string("bad magic, expected ") + magic);
  }
}

}  // namespace ovocc::binio
