#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles/canny_reference.hpp"
#include "support.hpp"
#include "vqadiff/canny.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/kernels.hpp"

using namespace vqadiff;
using namespace vqadiff::appearance;

namespace {

Image vertical_step(int size) {
  Image img(size, size, 1, 0);
  for (int y = 0; y < size; ++y)
    for (int x = size / 2; x < size; ++x) img.at(x, y) = 255;
  return img;
}

// Random texture patch pasted on a flat canvas.
Image blob_at(int canvas, int x0, int y0, const Image& patch) {
  Image img(canvas, canvas, 1, 90);
  for (int y = 0; y < patch.height; ++y)
    for (int x = 0; x < patch.width; ++x) img.at(x0 + x, y0 + y) = patch.at(x, y);
  return img;
}

}  // namespace

TEST_CASE("sobel on a 3x3 ramp") {
  Image ramp(3, 3, 1);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) ramp.at(x, y) = static_cast<std::uint8_t>(x + 3 * y);
  const auto g = kernels::sobel(ramp);
  // (2 + 2*5 + 8) - (0 + 2*3 + 6) = 8 ; (6 + 2*7 + 8) - (0 + 2*1 + 2) = 24
  CHECK(g.gx[4] == 8);
  CHECK(g.gy[4] == 24);
  CHECK(std::sqrt(double(g.gx[4]) * g.gx[4] + double(g.gy[4]) * g.gy[4]) == doctest::Approx(std::sqrt(640.0)));
  CHECK(kernels::serial::sobel(ramp).gx == g.gx);
}

TEST_CASE("gaussian taps") {
  const auto t = kernels::gaussian_taps(1.4);
  REQUIRE(t.size() == 5);  // radius round(2.1) = 2
  CHECK(t[2] == 4096);
  CHECK(t[0] == t[4]);
  CHECK(t[1] == t[3]);
  CHECK(t[1] == std::llround(4096 * std::exp(-1 / (2 * 1.96))));
  CHECK(kernels::gaussian_taps(0.3).size() == 3);
}

TEST_CASE("step edge matches the brute-force reference") {
  for (int size : {32, 64}) {
    const auto img = vertical_step(size);
    const auto got = canny(img, {1.4, 50, 150});
    const auto ref = oracle::canny_reference(img, 1.4, 50, 150);
    CHECK(got.raster.pixels == ref.edges);
    // one pixel wide, one column, every row
    int col = -1;
    for (int y = 0; y < size; ++y) {
      int count = 0;
      for (int x = 0; x < size; ++x)
        if (got.raster.at(x, y)) {
          ++count;
          if (col < 0) col = x;
          CHECK(x == col);
        }
      CHECK(count == 1);
    }
    CHECK((col == size / 2 - 1 || col == size / 2));
  }
}

TEST_CASE("random images match the brute-force reference") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const auto patch = testsupport::random_image(rng, 20, 20, 1);
    const auto img = blob_at(48, 10 + trial, 12, patch);
    for (const CannyParams p : {CannyParams{}, CannyParams{1.0, 40, 90}, CannyParams{2.0, 0, 300}}) {
      const auto ref = oracle::canny_reference(img, p.sigma, p.low, p.high);
      CHECK(canny(img, p).raster.pixels == ref.edges);
    }
  }
}

TEST_CASE("constant images have no edges") {
  for (std::uint8_t v : {0, 17, 128, 255}) {
    const auto e = canny(Image(40, 30, 3, v));
    for (auto p : e.raster.pixels) CHECK(p == 0);
  }
}

TEST_CASE("edge map is binary and same size") {
  std::mt19937 rng(4);
  const auto img = testsupport::random_image(rng, 37, 23);
  const auto e = canny(img);
  CHECK(e.raster.width == 37);
  CHECK(e.raster.height == 23);
  CHECK(e.raster.channels == 1);
  for (auto p : e.raster.pixels) CHECK((p == 0 || p == 255));
  CHECK(e.params == CannyParams{});
}

TEST_CASE("edges lie where the smoothed gradient reaches the low threshold") {
  std::mt19937 rng(12);
  const auto img = testsupport::random_image(rng, 50, 50, 1);
  const CannyParams p{1.2, 60, 120};
  const auto e = canny(img, p);
  const auto mag = smoothed_gradient_sq(img, p.sigma);
  for (std::size_t i = 0; i < mag.size(); ++i)
    if (e.raster.pixels[i]) CHECK(std::sqrt(double(mag[i])) >= p.low);
}

TEST_CASE("translation equivariance on interior shifts") {
  std::mt19937 rng(33);
  const auto patch = testsupport::random_image(rng, 20, 20, 1);
  const int canvas = 104;
  const auto base = canny(blob_at(canvas, 42, 42, patch)).raster;
  std::uniform_int_distribution<int> d(-18, 18);
  for (int t = 0; t < 100; ++t) {
    const int dx = d(rng), dy = d(rng);
    const auto moved = canny(blob_at(canvas, 42 + dx, 42 + dy, patch)).raster;
    int mismatches = 0;
    for (int y = 0; y < canvas; ++y)
      for (int x = 0; x < canvas; ++x) {
        const int sx = x - dx, sy = y - dy;
        const std::uint8_t want = (sx >= 0 && sy >= 0 && sx < canvas && sy < canvas) ? base.at(sx, sy) : 0;
        mismatches += moved.at(x, y) != want;
      }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("flat-shaded render has edges") {
  const auto img = testsupport::rect_image(64, 64, 16, 20, 48, 44);
  int n = 0;
  for (auto p : canny(img).raster.pixels) n += p != 0;
  CHECK(n > 0);
}

TEST_CASE("serial and parallel kernels agree") {
  std::mt19937 rng(2);
  const auto img = testsupport::random_image(rng, 97, 61, 1);
  const auto a = kernels::gaussian_blur(img, 1.4);
  CHECK(a == kernels::serial::gaussian_blur(img, 1.4));
  const auto ga = kernels::sobel(a), gb = kernels::serial::sobel(a);
  CHECK(ga.gx == gb.gx);
  CHECK(ga.gy == gb.gy);
  CHECK(kernels::nonmax_suppress(ga) == kernels::serial::nonmax_suppress(ga));
}

TEST_CASE("canny parameter validation") {
  const Image img(8, 8, 1);
  CHECK_THROWS_AS(canny(img, {1.4, 200, 100}), Error);
  CHECK_THROWS_AS(canny(img, {0, 10, 20}), Error);
  CHECK_THROWS_AS(canny(img, {1, -1, 20}), Error);
  CHECK_THROWS_AS(canny(Image()), Error);
  CHECK(CannyParams::from_json(CannyParams{2, 3, 4}.to_json()) == CannyParams{2, 3, 4});
}

TEST_CASE("direction quantization") {
  using kernels::Direction;
  CHECK(kernels::quantize_direction(10, 0) == Direction::horizontal);
  CHECK(kernels::quantize_direction(0, -10) == Direction::vertical);
  CHECK(kernels::quantize_direction(10, 10) == Direction::diag_down);
  CHECK(kernels::quantize_direction(-10, -10) == Direction::diag_down);
  CHECK(kernels::quantize_direction(10, -10) == Direction::diag_up);
}
