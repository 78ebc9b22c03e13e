#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqadiff/image.hpp"

// Pixel kernels behind the grid codec and the edge detector.
//
// Every kernel exists twice: the default entry points are OpenMP-parallel over
// rows, and kernels::serial holds straightforward single-threaded versions
// kept as the reference for tests and for bench_kernels. Both must produce
// bit-identical output; all arithmetic is integer so that holds regardless of
// evaluation order.
namespace vqadiff::kernels {

// Integer Gaussian taps for radius max(1, round(1.5 * sigma)), scaled so the
// centre tap is 1 << 12. The 2-D kernel is the outer product with itself.
std::vector<std::int64_t> gaussian_taps(double sigma);

struct Gradients {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> gx;
  std::vector<std::int32_t> gy;
};

// Quantized gradient direction used for non-maximum suppression.
enum class Direction : std::uint8_t { horizontal, diag_down, vertical, diag_up };

Direction quantize_direction(std::int32_t gx, std::int32_t gy);

// Copies an h x w block of `channels`-byte pixels between rasters.
void copy_block(const Image& src, int sx, int sy, Image& dst, int dx, int dy, int w, int h);

// Gray -> gray smoothing with replicated borders; result rounded to nearest.
Image gaussian_blur(const Image& gray, double sigma);

// 3x3 Sobel with replicated borders.
Gradients sobel(const Image& gray);

// Squared magnitude where the pixel is a local maximum along its quantized
// gradient direction, 0 elsewhere. Ties: strictly greater than the neighbour
// behind, greater-or-equal to the neighbour ahead. Out-of-image neighbours count as 0.
std::vector<std::int64_t> nonmax_suppress(const Gradients& g);

// Double threshold on squared magnitude plus 8-connected hysteresis; 0/255 output.
Image hysteresis(const std::vector<std::int64_t>& suppressed, int width, int height, std::int64_t low_sq,
                 std::int64_t high_sq);

namespace serial {

void copy_block(const Image& src, int sx, int sy, Image& dst, int dx, int dy, int w, int h);
// Direct 2-D convolution, no separable passes.
Image gaussian_blur(const Image& gray, double sigma);
Gradients sobel(const Image& gray);
std::vector<std::int64_t> nonmax_suppress(const Gradients& g);

}  // namespace serial

}  // namespace vqadiff::kernels
