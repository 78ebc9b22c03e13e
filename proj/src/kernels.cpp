#include "vqadiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vqadiff/error.hpp"

namespace vqadiff::kernels {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

constexpr std::int64_t kCenterTap = 1 << 12;

void check_gray(const Image& img, const char* who) {
  require(img.channels == 1, ErrorCode::invalid_argument, std::string(who) + ": expects a single-channel image");
  require(img.width > 0 && img.height > 0, ErrorCode::invalid_argument, std::string(who) + ": empty image");
}

void check_block(const Image& src, int sx, int sy, const Image& dst, int dx, int dy, int w, int h) {
  require(src.channels == dst.channels, ErrorCode::invalid_argument, "copy_block: channel mismatch");
  require(sx >= 0 && sy >= 0 && sx + w <= src.width && sy + h <= src.height, ErrorCode::invalid_argument,
          "copy_block: source block out of range");
  require(dx >= 0 && dy >= 0 && dx + w <= dst.width && dy + h <= dst.height, ErrorCode::invalid_argument,
          "copy_block: destination block out of range");
}

inline std::int32_t sobel_x(const Image& g, int x, int y) {
  const int w = g.width - 1, h = g.height - 1;
  const int xm = clampi(x - 1, 0, w), xp = clampi(x + 1, 0, w);
  const int ym = clampi(y - 1, 0, h), yp = clampi(y + 1, 0, h);
  return (g.at(xp, ym) + 2 * g.at(xp, y) + g.at(xp, yp)) - (g.at(xm, ym) + 2 * g.at(xm, y) + g.at(xm, yp));
}

inline std::int32_t sobel_y(const Image& g, int x, int y) {
  const int w = g.width - 1, h = g.height - 1;
  const int xm = clampi(x - 1, 0, w), xp = clampi(x + 1, 0, w);
  const int ym = clampi(y - 1, 0, h), yp = clampi(y + 1, 0, h);
  return (g.at(xm, yp) + 2 * g.at(x, yp) + g.at(xp, yp)) - (g.at(xm, ym) + 2 * g.at(x, ym) + g.at(xp, ym));
}

inline void direction_step(Direction d, int& dx, int& dy) {
  switch (d) {
    case Direction::horizontal: dx = 1; dy = 0; break;
    case Direction::vertical: dx = 0; dy = 1; break;
    case Direction::diag_down: dx = 1; dy = 1; break;
    case Direction::diag_up: dx = 1; dy = -1; break;
  }
}

inline std::int64_t suppress_one(const Gradients& g, const std::vector<std::int64_t>& mag, int x, int y) {
  const std::size_t i = static_cast<std::size_t>(y) * g.width + x;
  const std::int64_t m = mag[i];
  if (m == 0) return 0;
  int dx = 0, dy = 0;
  direction_step(quantize_direction(g.gx[i], g.gy[i]), dx, dy);
  auto at = [&](int xx, int yy) -> std::int64_t {
    if (xx < 0 || yy < 0 || xx >= g.width || yy >= g.height) return 0;
    return mag[static_cast<std::size_t>(yy) * g.width + xx];
  };
  const std::int64_t behind = at(x - dx, y - dy);
  const std::int64_t ahead = at(x + dx, y + dy);
  return (m > behind && m >= ahead) ? m : 0;
}

std::vector<std::int64_t> squared_magnitude(const Gradients& g) {
  std::vector<std::int64_t> mag(g.gx.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::int64_t{g.gx[i]} * g.gx[i] + std::int64_t{g.gy[i]} * g.gy[i];
  }
  return mag;
}

}  // namespace

std::vector<std::int64_t> gaussian_taps(double sigma) {
  require(sigma > 0 && std::isfinite(sigma), ErrorCode::invalid_argument, "gaussian: sigma must be > 0");
  const int radius = std::max(1, static_cast<int>(std::lround(1.5 * sigma)));
  std::vector<std::int64_t> taps(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = std::llround(w * static_cast<double>(kCenterTap));
  }
  return taps;
}

Direction quantize_direction(std::int32_t gx, std::int32_t gy) {
  const std::int64_t ax = std::abs(std::int64_t{gx});
  const std::int64_t ay = std::abs(std::int64_t{gy});
  // tan(22.5 deg) ~ 0.41421, tan(67.5 deg) ~ 2.41421
  if (ay * 100000 <= ax * 41421) return Direction::horizontal;
  if (ay * 100000 >= ax * 241421) return Direction::vertical;
  return ((gx > 0) == (gy > 0)) ? Direction::diag_down : Direction::diag_up;
}

void copy_block(const Image& src, int sx, int sy, Image& dst, int dx, int dy, int w, int h) {
  check_block(src, sx, sy, dst, dx, dy, w, h);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * src.channels;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < h; ++r) {
    std::memcpy(&dst.at(dx, dy + r), src.row(sy + r).data() + static_cast<std::size_t>(sx) * src.channels, row_bytes);
  }
}

Image gaussian_blur(const Image& gray, double sigma) {
  check_gray(gray, "gaussian_blur");
  const auto taps = gaussian_taps(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  std::int64_t k1 = 0;
  for (auto t : taps) k1 += t;
  const std::int64_t norm = k1 * k1;
  const int w = gray.width, h = gray.height;

  std::vector<std::int64_t> rows(static_cast<std::size_t>(w) * h);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::int64_t acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        acc += taps[static_cast<std::size_t>(i + radius)] * gray.at(clampi(x + i, 0, w - 1), y);
      }
      rows[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }

  Image out(w, h, 1);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::int64_t acc = 0;
      for (int j = -radius; j <= radius; ++j) {
        acc += taps[static_cast<std::size_t>(j + radius)] * rows[static_cast<std::size_t>(clampi(y + j, 0, h - 1)) * w + x];
      }
      out.at(x, y) = static_cast<std::uint8_t>((acc + norm / 2) / norm);
    }
  }
  return out;
}

Gradients sobel(const Image& gray) {
  check_gray(gray, "sobel");
  Gradients g{gray.width, gray.height, {}, {}};
  const std::size_t n = static_cast<std::size_t>(gray.width) * gray.height;
  g.gx.resize(n);
  g.gy.resize(n);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * gray.width + x;
      g.gx[i] = sobel_x(gray, x, y);
      g.gy[i] = sobel_y(gray, x, y);
    }
  }
  return g;
}

std::vector<std::int64_t> nonmax_suppress(const Gradients& g) {
  const auto mag = squared_magnitude(g);
  std::vector<std::int64_t> out(mag.size(), 0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      out[static_cast<std::size_t>(y) * g.width + x] = suppress_one(g, mag, x, y);
    }
  }
  return out;
}

Image hysteresis(const std::vector<std::int64_t>& suppressed, int width, int height, std::int64_t low_sq,
                 std::int64_t high_sq) {
  require(suppressed.size() == static_cast<std::size_t>(width) * height, ErrorCode::invalid_argument,
          "hysteresis: size mismatch");
  Image out(width, height, 1, 0);
  std::vector<int> stack;
  auto candidate = [&](std::size_t i) { return suppressed[i] > 0 && suppressed[i] >= low_sq; };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      if (out.pixels[i] || !candidate(i) || suppressed[i] < high_sq) continue;
      out.pixels[i] = 255;
      stack.push_back(static_cast<int>(i));
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cx = cur % width, cy = cur / width;
        for (int ny = std::max(0, cy - 1); ny <= std::min(height - 1, cy + 1); ++ny) {
          for (int nx = std::max(0, cx - 1); nx <= std::min(width - 1, cx + 1); ++nx) {
            const std::size_t j = static_cast<std::size_t>(ny) * width + nx;
            if (!out.pixels[j] && candidate(j)) {
              out.pixels[j] = 255;
              stack.push_back(static_cast<int>(j));
            }
          }
        }
      }
    }
  }
  return out;
}

namespace serial {

void copy_block(const Image& src, int sx, int sy, Image& dst, int dx, int dy, int w, int h) {
  check_block(src, sx, sy, dst, dx, dy, w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < src.channels; ++ch) dst.at(dx + c, dy + r, ch) = src.at(sx + c, sy + r, ch);
    }
  }
}

Image gaussian_blur(const Image& gray, double sigma) {
  check_gray(gray, "gaussian_blur");
  const auto taps = gaussian_taps(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  std::int64_t norm = 0;
  for (auto a : taps) {
    for (auto b : taps) norm += a * b;
  }
  const int w = gray.width, h = gray.height;
  Image out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::int64_t acc = 0;
      for (int j = -radius; j <= radius; ++j) {
        for (int i = -radius; i <= radius; ++i) {
          acc += taps[static_cast<std::size_t>(i + radius)] * taps[static_cast<std::size_t>(j + radius)] *
                 gray.at(clampi(x + i, 0, w - 1), clampi(y + j, 0, h - 1));
        }
      }
      out.at(x, y) = static_cast<std::uint8_t>((acc + norm / 2) / norm);
    }
  }
  return out;
}

Gradients sobel(const Image& gray) {
  check_gray(gray, "sobel");
  static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  Gradients g{gray.width, gray.height, {}, {}};
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      std::int32_t sx = 0, sy = 0;
      for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
          const int p = gray.at(clampi(x + i, 0, gray.width - 1), clampi(y + j, 0, gray.height - 1));
          sx += kx[j + 1][i + 1] * p;
          sy += ky[j + 1][i + 1] * p;
        }
      }
      g.gx.push_back(sx);
      g.gy.push_back(sy);
    }
  }
  return g;
}

std::vector<std::int64_t> nonmax_suppress(const Gradients& g) {
  const auto mag = squared_magnitude(g);
  std::vector<std::int64_t> out(mag.size(), 0);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) out[static_cast<std::size_t>(y) * g.width + x] = suppress_one(g, mag, x, y);
  }
  return out;
}

}  // namespace serial

}  // namespace vqadiff::kernels
