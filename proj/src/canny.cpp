#include "vqadiff/canny.hpp"

#include <cmath>

#include "vqadiff/error.hpp"
#include "vqadiff/kernels.hpp"

namespace vqadiff::appearance {

namespace {

std::int64_t threshold_sq(double t) { return static_cast<std::int64_t>(std::ceil(t * t)); }

}  // namespace

void CannyParams::validate() const {
  require(std::isfinite(sigma) && sigma > 0, ErrorCode::invalid_argument, "canny: sigma must be > 0");
  require(std::isfinite(low) && low >= 0, ErrorCode::invalid_argument, "canny: low threshold must be >= 0");
  require(std::isfinite(high) && high >= low, ErrorCode::invalid_argument,
          "canny: high threshold must be >= low threshold");
}

nlohmann::json CannyParams::to_json() const {
  return {{"gaussian_sigma", sigma}, {"low_threshold", low}, {"high_threshold", high}};
}

CannyParams CannyParams::from_json(const nlohmann::json& j) {
  CannyParams p;
  p.sigma = j.value("gaussian_sigma", p.sigma);
  p.low = j.value("low_threshold", p.low);
  p.high = j.value("high_threshold", p.high);
  return p;
}

EdgeMap canny(const Image& image, const CannyParams& params) {
  params.validate();
  require(!image.empty(), ErrorCode::invalid_argument, "canny: empty image");
  const Image gray = to_gray(image);
  const Image smooth = kernels::gaussian_blur(gray, params.sigma);
  const auto grad = kernels::sobel(smooth);
  const auto thin = kernels::nonmax_suppress(grad);
  return {kernels::hysteresis(thin, gray.width, gray.height, threshold_sq(params.low), threshold_sq(params.high)),
          params};
}

std::vector<std::int64_t> smoothed_gradient_sq(const Image& image, double sigma) {
  const auto grad = kernels::sobel(kernels::gaussian_blur(to_gray(image), sigma));
  std::vector<std::int64_t> mag(grad.gx.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::int64_t{grad.gx[i]} * grad.gx[i] + std::int64_t{grad.gy[i]} * grad.gy[i];
  }
  return mag;
}

}  // namespace vqadiff::appearance
