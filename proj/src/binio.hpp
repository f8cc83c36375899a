#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

namespace dcap::binio {

inline void put_bytes(std::ostream& os, std::uint64_t v, int count) {
  char buf[8];
  for (int i = 0; i < count; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, count);
}

/// Err is thrown (with the stream's role in the message) on a short read.
template <class Err>
std::uint64_t get_bytes(std::istream& is, int count) {
  char buf[8];
  is.read(buf, count);
  if (is.gcount() != count) throw Err("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < count; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_bytes(os, s.size(), 4);
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class Err>
std::string get_string(std::istream& is) {
  std::size_t len = static_cast<std::size_t>(get_bytes<Err>(is, 4));
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(is.gcount()) != len) throw Err("unexpected end of file");
  return s;
}

inline void put_f64(std::ostream& os, double v) {
  put_bytes(os, std::bit_cast<std::uint64_t>(v), 8);
}

template <class Err>
double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_bytes<Err>(is, 8));
}

}  // namespace dcap::binio
