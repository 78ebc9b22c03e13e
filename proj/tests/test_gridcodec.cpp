#include <random>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/gridcodec.hpp"
#include "vqadiff/kernels.hpp"

using namespace vqadiff;
using namespace vqadiff::grid;

TEST_CASE("tile places quadrants row-major") {
  std::array<Image, 4> v;
  for (int q = 0; q < 4; ++q) v[q] = Image(256, 256, 3, static_cast<std::uint8_t>(10 * (q + 1)));
  const auto g = tile(v, {0, 1, 2, 3});
  CHECK(g.image.width == 512);
  CHECK(g.image.height == 512);
  CHECK(g.sub_size == 256);
  CHECK(g.image.at(0, 0) == 10);
  CHECK(g.image.at(511, 0) == 20);
  CHECK(g.image.at(0, 511) == 30);
  CHECK(g.image.at(511, 511) == 40);
  CHECK(g.image.at(255, 255) == 10);
  CHECK(g.image.at(256, 255) == 20);
}

TEST_CASE("identical solid views give identical quadrants") {
  std::array<Image, 4> v;
  v.fill(Image(8, 8, 3, 77));
  const auto parts = split(tile(v, {3, 2, 1, 0}));
  for (const auto& p : parts) CHECK(p == v[0]);
}

TEST_CASE("tile/split round trip on random rasters") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<Image, 4> v;
    for (auto& img : v) img = testsupport::random_image(rng, 64, 64);
    const auto g = tile(v, {4, 5, 6, 7});
    const auto back = split(g);
    for (int q = 0; q < 4; ++q) {
      CHECK(back[q] == v[q]);
      CHECK(pixel_sum(back[q]) == pixel_sum(v[q]));
    }
    CHECK(tile(back, g.view_indices).image == g.image);
    CHECK(split(g.image)[2] == v[2]);
  }
}

TEST_CASE("permuting inputs permutes quadrants") {
  std::mt19937 rng(6);
  std::array<Image, 4> v;
  for (auto& img : v) img = testsupport::random_image(rng, 16, 16);
  const std::array<Image, 4> perm{v[2], v[0], v[3], v[1]};
  const auto a = split(tile(v, {0, 1, 2, 3}));
  const auto b = split(tile(perm, {2, 0, 3, 1}));
  CHECK(b[0] == a[2]);
  CHECK(b[1] == a[0]);
  CHECK(b[2] == a[3]);
  CHECK(b[3] == a[1]);
}

TEST_CASE("tile and split reject bad input") {
  std::array<Image, 4> v;
  v.fill(Image(8, 8, 3));
  v[3] = Image(9, 9, 3);
  CHECK_THROWS_AS(tile(v, {0, 1, 2, 3}), Error);
  v[3] = Image(8, 8, 3);
  CHECK_THROWS_AS(tile(v, {0, 1, 1, 3}), Error);
  CHECK_THROWS_AS(split(Image(9, 9, 3)), Error);
  CHECK_THROWS_AS(split(Image(8, 10, 3)), Error);
}

TEST_CASE("square grids for the single-model layouts") {
  std::mt19937 rng(8);
  for (int k : {2, 3, 4}) {
    std::vector<Image> v;
    for (int i = 0; i < k * k; ++i) v.push_back(testsupport::random_image(rng, 12, 12));
    const auto g = tile_square(v, k);
    CHECK(g.width == 12 * k);
    const auto back = split_square(g, k);
    REQUIRE(back.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == v[i]);
  }
}

TEST_CASE("expert assignment partitions the ring") {
  const auto a = expert_assignment(16, 4);
  CHECK(a.anchor_indices == std::vector<int>{0, 4, 8, 12});
  CHECK(a.neighbor_map.at(4) == std::vector<int>{4, 5, 6, 7});
  std::set<int> all;
  std::size_t total = 0;
  for (const auto& [anchor, views] : a.neighbor_map) {
    CHECK(views.front() == anchor);
    all.insert(views.begin(), views.end());
    total += views.size();
  }
  CHECK(total == 16);
  CHECK(all.size() == 16);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 15);
  for (int v = 0; v < 16; ++v) {
    CHECK(a.expert_of(v) == v / 4);
    CHECK(a.slot_of(v) == v % 4);
  }

  const auto single = expert_assignment(4, 4);
  CHECK(single.anchor_indices == std::vector<int>{0});
  CHECK(single.neighbor_map.at(0) == std::vector<int>{0, 1, 2, 3});

  for (auto [n, s] : {std::pair{12, 3}, std::pair{8, 2}, std::pair{9, 9}}) {
    const auto e = expert_assignment(n, s);
    std::set<int> seen;
    for (const auto& [anchor, views] : e.neighbor_map) {
      CHECK(static_cast<int>(views.size()) == s);
      for (int x : views) CHECK(seen.insert(x).second);
    }
    CHECK(static_cast<int>(seen.size()) == n);
  }
  CHECK_THROWS_AS(expert_assignment(16, 5), Error);
  CHECK_THROWS_AS(expert_assignment(16, 0), Error);
}

TEST_CASE("grid file names") {
  CHECK(anchor_grid_name("car1") == "car1_anchorgrid.png");
  CHECK(expert_grid_name("car1", 2) == "car1_expert2.png");
}

TEST_CASE("parallel copy_block matches serial") {
  std::mt19937 rng(9);
  const auto src = testsupport::random_image(rng, 40, 30);
  Image a(50, 50, 3, 1), b(50, 50, 3, 1);
  kernels::copy_block(src, 3, 4, a, 10, 11, 25, 19);
  kernels::serial::copy_block(src, 3, 4, b, 10, 11, 25, 19);
  CHECK(a == b);
  CHECK_THROWS_AS(kernels::copy_block(src, 30, 0, a, 0, 0, 20, 5), Error);
}
