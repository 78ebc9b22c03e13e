#pragma once

// Brute-force Canny written from the textbook description, sharing no code
// with the library: direct 2-D convolution, explicit Sobel masks, angle bins
// from atan2, and hysteresis by repeated relaxation until nothing changes.
// Gray input only.

#include <cmath>
#include <cstdint>
#include <vector>

#include "vqadiff/image.hpp"

namespace oracle {

struct CannyRef {
  int w = 0, h = 0;
  std::vector<int> smooth;
  std::vector<long long> gx, gy, mag2, thin;
  std::vector<std::uint8_t> edges;
};

inline CannyRef canny_reference(const vqadiff::Image& gray, double sigma, double low, double high) {
  CannyRef r;
  r.w = gray.width;
  r.h = gray.height;
  const int w = r.w, h = r.h, n = w * h;
  auto px = [&](int x, int y) {
    x = x < 0 ? 0 : (x >= w ? w - 1 : x);
    y = y < 0 ? 0 : (y >= h ? h - 1 : y);
    return static_cast<long long>(gray.pixels[static_cast<std::size_t>(y) * w + x]);
  };

  // integer taps, centre 4096, radius max(1, round(1.5 sigma))
  int rad = static_cast<int>(std::lround(1.5 * sigma));
  if (rad < 1) rad = 1;
  std::vector<long long> t;
  for (int i = -rad; i <= rad; ++i) t.push_back(std::llround(4096.0 * std::exp(-(i * i) / (2 * sigma * sigma))));
  long long tsum = 0;
  for (auto v : t) tsum += v;
  const long long norm = tsum * tsum;

  r.smooth.assign(n, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long long acc = 0;
      for (int j = -rad; j <= rad; ++j)
        for (int i = -rad; i <= rad; ++i) acc += t[j + rad] * t[i + rad] * px(x + i, y + j);
      r.smooth[y * w + x] = static_cast<int>((acc + norm / 2) / norm);
    }

  auto sp = [&](int x, int y) {
    x = x < 0 ? 0 : (x >= w ? w - 1 : x);
    y = y < 0 ? 0 : (y >= h ? h - 1 : y);
    return static_cast<long long>(r.smooth[y * w + x]);
  };
  static const int KX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int KY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  r.gx.assign(n, 0);
  r.gy.assign(n, 0);
  r.mag2.assign(n, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long long sx = 0, sy = 0;
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
          sx += KX[j][i] * sp(x + i - 1, y + j - 1);
          sy += KY[j][i] * sp(x + i - 1, y + j - 1);
        }
      r.gx[y * w + x] = sx;
      r.gy[y * w + x] = sy;
      r.mag2[y * w + x] = sx * sx + sy * sy;
    }

  auto m = [&](int x, int y) -> long long {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0;
    return r.mag2[y * w + x];
  };
  r.thin.assign(n, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const long long here = m(x, y);
      if (here == 0) continue;
      // direction folded into [0, 180)
      double a = std::atan2(static_cast<double>(r.gy[y * w + x]), static_cast<double>(r.gx[y * w + x])) * 180.0 / M_PI;
      if (a < 0) a += 180.0;
      int dx, dy;
      if (a <= 22.5 || a >= 157.5) { dx = 1; dy = 0; }
      else if (a >= 67.5 && a <= 112.5) { dx = 0; dy = 1; }
      else if (a < 90) { dx = 1; dy = 1; }
      else { dx = 1; dy = -1; }
      if (here > m(x - dx, y - dy) && here >= m(x + dx, y + dy)) r.thin[y * w + x] = here;
    }

  const long long lo = static_cast<long long>(std::ceil(low * low));
  const long long hi = static_cast<long long>(std::ceil(high * high));
  r.edges.assign(n, 0);
  for (int i = 0; i < n; ++i)
    if (r.thin[i] > 0 && r.thin[i] >= hi) r.edges[i] = 255;
  for (bool changed = true; changed;) {
    changed = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int i = y * w + x;
        if (r.edges[i] || r.thin[i] <= 0 || r.thin[i] < lo) continue;
        for (int j = -1; j <= 1 && !r.edges[i]; ++j)
          for (int k = -1; k <= 1; ++k) {
            const int xx = x + k, yy = y + j;
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            if (r.edges[yy * w + xx]) {
              r.edges[i] = 255;
              changed = true;
              break;
            }
          }
      }
  }
  return r;
}

}  // namespace oracle
