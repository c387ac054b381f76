#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sigfuzz {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Two-digit uppercase hex, space separated ("08 00 01 00").
std::string to_hex(ByteView bytes);

// Accepts any whitespace between octets; throws std::invalid_argument on bad input.
Bytes from_hex(std::string_view text);

inline void put_u16le(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline std::uint16_t get_u16le(ByteView in, std::size_t offset) {
  return static_cast<std::uint16_t>(in[offset] | (in[offset + 1] << 8));
}

}  // namespace sigfuzz
