#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "vqadiff/geometry.hpp"
#include "vqadiff/image.hpp"
#include "vqadiff/vqa_pipeline.hpp"

namespace testsupport {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("vqadiff-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline vqadiff::Image random_image(std::mt19937& rng, int w, int h, int c = 3) {
  vqadiff::Image img(w, h, c);
  // four bytes per draw
  std::uint32_t bits = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (i % 4 == 0) bits = static_cast<std::uint32_t>(rng());
    img.pixels[i] = static_cast<std::uint8_t>(bits >> (8 * (i % 4)));
  }
  return img;
}

// Coloured rectangle on a flat background.
inline vqadiff::Image rect_image(int w, int h, int x0, int y0, int x1, int y1, std::uint8_t bg = 200) {
  vqadiff::Image img(w, h, 3, bg);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      img.at(x, y, 0) = 180;
      img.at(x, y, 1) = 30;
      img.at(x, y, 2) = 40;
    }
  return img;
}

// Writes root/<id>/view_XX.png (distinct random content per view) and,
// optionally, a prompt.json.
inline void make_instance(const std::filesystem::path& root, const std::string& id, int n_views, int size,
                          bool with_prompt, unsigned seed) {
  std::mt19937 rng(seed);
  std::filesystem::create_directories(root / id);
  for (int v = 0; v < n_views; ++v)
    vqadiff::write_png(random_image(rng, size, size), root / id / vqadiff::geometry::view_file_name(v));
  if (with_prompt) {
    vqadiff::vqa::VehiclePrompt p;
    p.question = vqadiff::vqa::kCanonicalQuestion;
    p.answer = "2014 Dodge Ram 1500 number " + id;
    std::ofstream(root / id / "prompt.json") << p.to_json().dump(2);
  }
}

}  // namespace testsupport
