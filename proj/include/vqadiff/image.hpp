#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace vqadiff {

// Interleaved 8-bit raster. channels is 1 (gray, masks, edge maps) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const noexcept { return pixels.empty(); }
  std::size_t stride() const noexcept { return static_cast<std::size_t>(width) * channels; }

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[static_cast<std::size_t>(y) * stride() + static_cast<std::size_t>(x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[static_cast<std::size_t>(y) * stride() + static_cast<std::size_t>(x) * channels + c];
  }

  std::span<const std::uint8_t> row(int y) const {
    return {pixels.data() + static_cast<std::size_t>(y) * stride(), stride()};
  }

  friend bool operator==(const Image&, const Image&) = default;
};

Image to_gray(const Image& img);
Image to_rgb(const Image& img);

// Sum of all channel bytes; cheap checksum used by tests and the grid codec audit.
std::uint64_t pixel_sum(const Image& img);

// PNG I/O. Writes are deterministic: identical images produce identical files.
Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

}  // namespace vqadiff
