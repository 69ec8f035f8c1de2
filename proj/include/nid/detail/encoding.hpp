#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "nid/error.hpp"

namespace nid::detail {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw DataError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw DataError("base64: invalid input");
  // EVP_DecodeBlock keeps the zero bytes that stand in for padding.
  std::size_t pad = 0;
  for (std::size_t i = text.size(); i > 0 && text[i - 1] == '=' && pad < 2; --i) ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// Row-major little-endian f64 block, base64 encoded.
inline std::string encode_f64(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64_encode(bytes);
}

inline std::vector<double> decode_f64(std::string_view text, std::size_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != expected * sizeof(double)) {
    throw DataError("f64 block: expected " + std::to_string(expected) + " values, got " +
                    std::to_string(bytes.size() / sizeof(double)));
  }
  std::vector<double> out(expected);
  if (expected) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace nid::detail
