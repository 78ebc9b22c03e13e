#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "vqadiff/image.hpp"

namespace vqadiff::appearance {

struct CannyParams {
  double sigma = 1.4;   // 5x5 smoothing kernel
  double low = 100.0;   // on gradient magnitude of the 8-bit smoothed image
  double high = 200.0;

  void validate() const;
  nlohmann::json to_json() const;
  static CannyParams from_json(const nlohmann::json& j);
  friend bool operator==(const CannyParams&, const CannyParams&) = default;
};

struct EdgeMap {
  Image raster;  // single channel, values 0 or 255
  CannyParams params;
};

// Gaussian smoothing, Sobel gradients, non-maximum suppression along the
// quantized gradient direction, then double-threshold hysteresis with
// 8-connectivity. RGB input is converted to luma first.
EdgeMap canny(const Image& image, const CannyParams& params = {});

// Squared gradient magnitude of the smoothed image, before suppression.
std::vector<std::int64_t> smoothed_gradient_sq(const Image& image, double sigma);

}  // namespace vqadiff::appearance
