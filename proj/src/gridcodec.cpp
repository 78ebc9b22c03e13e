#include "vqadiff/gridcodec.hpp"

#include <set>

#include "vqadiff/error.hpp"
#include "vqadiff/kernels.hpp"

namespace vqadiff::grid {

Image tile_square(std::span<const Image> views, int k) {
  require(k >= 1, ErrorCode::invalid_argument, "tile: grid order must be >= 1");
  require(views.size() == static_cast<std::size_t>(k) * k, ErrorCode::invalid_argument,
          "tile: expected " + std::to_string(k * k) + " views, got " + std::to_string(views.size()));
  const Image& first = views.front();
  require(first.width > 0 && first.width == first.height, ErrorCode::invalid_argument,
          "tile: views must be non-empty squares");
  for (const auto& v : views) {
    require(v.width == first.width && v.height == first.height && v.channels == first.channels,
            ErrorCode::invalid_argument, "tile: views differ in size or channel count");
  }
  const int s = first.width;
  Image out(s * k, s * k, first.channels);
  for (int q = 0; q < k * k; ++q) {
    kernels::copy_block(views[static_cast<std::size_t>(q)], 0, 0, out, (q % k) * s, (q / k) * s, s, s);
  }
  return out;
}

std::vector<Image> split_square(const Image& grid_image, int k) {
  require(k >= 1, ErrorCode::invalid_argument, "split: grid order must be >= 1");
  require(grid_image.width == grid_image.height, ErrorCode::invalid_argument, "split: grid must be square");
  require(grid_image.width > 0 && grid_image.width % k == 0, ErrorCode::invalid_argument,
          "split: side " + std::to_string(grid_image.width) + " not divisible by " + std::to_string(k));
  const int s = grid_image.width / k;
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(k) * k);
  for (int q = 0; q < k * k; ++q) {
    Image v(s, s, grid_image.channels);
    kernels::copy_block(grid_image, (q % k) * s, (q / k) * s, v, 0, 0, s, s);
    out.push_back(std::move(v));
  }
  return out;
}

ViewGrid tile(std::span<const Image> views, const std::array<int, 4>& indices) {
  require(std::set<int>(indices.begin(), indices.end()).size() == 4, ErrorCode::invalid_argument,
          "tile: view indices must be distinct");
  ViewGrid g;
  g.image = tile_square(views, 2);
  g.sub_size = views.front().width;
  g.view_indices = indices;
  return g;
}

std::array<Image, 4> split(const Image& grid_image) {
  auto parts = split_square(grid_image, 2);
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2]), std::move(parts[3])};
}

std::array<Image, 4> split(const ViewGrid& grid) {
  require(grid.image.width == 2 * grid.sub_size, ErrorCode::invalid_argument,
          "split: image side must equal 2 * sub_size");
  return split(grid.image);
}

ExpertAssignment expert_assignment(int n_views, int stride) {
  require(n_views >= 1 && stride >= 1, ErrorCode::invalid_argument, "expert_assignment: sizes must be positive");
  require(n_views % stride == 0, ErrorCode::invalid_argument,
          "expert_assignment: stride " + std::to_string(stride) + " does not divide " + std::to_string(n_views));
  ExpertAssignment a;
  a.n_views = n_views;
  a.stride = stride;
  for (int anchor = 0; anchor < n_views; anchor += stride) {
    a.anchor_indices.push_back(anchor);
    std::vector<int> block;
    // Following-views convention: the expert owns its anchor and the stride-1 views after it.
    for (int j = 0; j < stride; ++j) block.push_back((anchor + j) % n_views);
    a.neighbor_map.emplace(anchor, std::move(block));
  }
  return a;
}

std::string anchor_grid_name(const std::string& instance) { return instance + "_anchorgrid.png"; }

std::string expert_grid_name(const std::string& instance, int k) {
  return instance + "_expert" + std::to_string(k) + ".png";
}

}  // namespace vqadiff::grid
