#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vqadiff/image.hpp"

namespace vqadiff {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string file_digest(const std::filesystem::path& path);
// Digest over (relative path, file digest) of every regular file below dir, in sorted order.
std::string directory_digest(const std::filesystem::path& dir);

// Digest of raw pixel content and geometry (independent of any file encoding).
std::string image_digest(const Image& img);

// Digest of the canonical (sorted-key, compact) serialization.
std::string json_digest(const nlohmann::json& j);

// First 8 bytes of SHA-256 as an integer; seeds stub generators.
std::uint64_t hash64(std::string_view text);
std::uint64_t hash64(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// splitmix64 finalizer; stateless mixing for procedural stubs.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b));
}

// Uniform double in [0,1) from a 64-bit key.
constexpr double unit_double(std::uint64_t key) noexcept {
  return static_cast<double>(mix64(key) >> 11) * 0x1.0p-53;
}

}  // namespace vqadiff
