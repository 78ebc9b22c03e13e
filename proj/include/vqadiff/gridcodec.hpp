#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vqadiff/image.hpp"

namespace vqadiff::grid {

inline constexpr int kDefaultSubSize = 256;

// 2x2 packing of four views. Quadrant order is row-major:
// position 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
struct ViewGrid {
  Image image;
  int sub_size = kDefaultSubSize;
  std::array<int, 4> view_indices{};
};

struct ExpertAssignment {
  int n_views = 0;
  int stride = 0;
  std::vector<int> anchor_indices;
  // anchor index -> views that expert produces, anchor first.
  std::map<int, std::vector<int>> neighbor_map;

  // Expert ordinal (0-based) that owns a view, and its quadrant/slot within that expert's output.
  int expert_of(int view) const { return view / stride; }
  int slot_of(int view) const { return view % stride; }
};

ViewGrid tile(std::span<const Image> views, const std::array<int, 4>& indices);
std::array<Image, 4> split(const ViewGrid& grid);
// Splits a raw 2x2 raster that carries no index metadata.
std::array<Image, 4> split(const Image& grid_image);

// k x k generalization used by the single-model ablation layouts (k = 3 or 4).
Image tile_square(std::span<const Image> views, int k);
std::vector<Image> split_square(const Image& grid_image, int k);

ExpertAssignment expert_assignment(int n_views, int stride);

std::string anchor_grid_name(const std::string& instance);           // "<instance>_anchorgrid.png"
std::string expert_grid_name(const std::string& instance, int k);    // "<instance>_expert<k>.png"

}  // namespace vqadiff::grid
