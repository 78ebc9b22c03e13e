// Times the OpenMP kernels against their serial references and checks that
// both produce identical output.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "vqadiff/image.hpp"
#include "vqadiff/kernels.hpp"

using namespace vqadiff;
namespace k = vqadiff::kernels;

namespace {

template <typename Fn>
double best_ms(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

int report(const char* name, double serial_ms, double parallel_ms, bool same) {
  std::printf("%-14s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, same ? "identical" : "MISMATCH");
  return same ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  const int size = argc > 1 ? std::atoi(argv[1]) : 1024;
  const int reps = argc > 2 ? std::atoi(argv[2]) : 5;
  if (size < 16 || reps < 1) {
    std::fprintf(stderr, "usage: bench_kernels [size>=16] [reps>=1]\n");
    return 2;
  }

  std::mt19937 rng(7);
  Image gray(size, size, 1);
  for (auto& p : gray.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  Image rgb(size, size, 3);
  for (auto& p : rgb.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);

  int bad = 0;
  std::printf("%dx%d, best of %d\n", size, size, reps);

  Image blur_s, blur_p;
  const double bs = best_ms(reps, [&] { blur_s = k::serial::gaussian_blur(gray, 1.4); });
  const double bp = best_ms(reps, [&] { blur_p = k::gaussian_blur(gray, 1.4); });
  bad += report("gaussian_blur", bs, bp, blur_s == blur_p);

  k::Gradients g_s, g_p;
  const double ss = best_ms(reps, [&] { g_s = k::serial::sobel(blur_s); });
  const double sp = best_ms(reps, [&] { g_p = k::sobel(blur_s); });
  bad += report("sobel", ss, sp, g_s.gx == g_p.gx && g_s.gy == g_p.gy);

  std::vector<std::int64_t> n_s, n_p;
  const double ns = best_ms(reps, [&] { n_s = k::serial::nonmax_suppress(g_s); });
  const double np = best_ms(reps, [&] { n_p = k::nonmax_suppress(g_s); });
  bad += report("nonmax", ns, np, n_s == n_p);

  // Tiling a 2x2 grid from four quadrants, the grid codec's inner loop.
  const int half = size / 2;
  Image t_s(size, size, 3), t_p(size, size, 3);
  auto tile_with = [&](auto copy, Image& dst) {
    for (int q = 0; q < 4; ++q) copy(rgb, (q % 2) * half, (q / 2) * half, dst, (1 - q % 2) * half, (1 - q / 2) * half, half, half);
  };
  const double cs = best_ms(reps, [&] { tile_with(k::serial::copy_block, t_s); });
  const double cp = best_ms(reps, [&] { tile_with(k::copy_block, t_p); });
  bad += report("copy_block", cs, cp, t_s == t_p);

  return bad == 0 ? 0 : 1;
}
