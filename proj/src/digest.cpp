#include "vqadiff/digest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>

#include "vqadiff/error.hpp"

namespace vqadiff {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      fail(ErrorCode::io, "sha256: OpenSSL digest init failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::array<std::uint8_t, 32> finish() {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out.data(), &len);
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string to_hex(std::span<const std::uint8_t> raw) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(raw.size() * 2);
  for (auto b : raw) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xf]);
  }
  return s;
}

std::uint64_t first_u64(const std::array<std::uint8_t, 32>& d) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return to_hex(h.finish());
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return to_hex(h.finish());
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return to_hex(h.finish());
}

std::string directory_digest(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::io, dir.string() + " is not a directory");
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.emplace_back(e.path().lexically_relative(dir).generic_string(), file_digest(e.path()));
  }
  std::sort(files.begin(), files.end());
  std::string manifest;
  for (const auto& [name, d] : files) manifest += name + "\t" + d + "\n";
  return sha256_hex(manifest);
}

std::string image_digest(const Image& img) {
  Sha256 h;
  const std::int32_t header[3] = {img.width, img.height, img.channels};
  h.update(header, sizeof(header));
  h.update(img.pixels.data(), img.pixels.size());
  return to_hex(h.finish());
}

std::string json_digest(const nlohmann::json& j) { return sha256_hex(j.dump()); }

std::uint64_t hash64(std::string_view text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return first_u64(h.finish());
}

std::uint64_t hash64(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return first_u64(h.finish());
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  require(text.size() % 4 == 0, ErrorCode::invalid_argument, "base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  require(n >= 0, ErrorCode::invalid_argument, "base64: malformed input");
  // EVP_DecodeBlock does not strip padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace vqadiff
