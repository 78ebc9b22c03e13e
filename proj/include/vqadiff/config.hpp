#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "vqadiff/backends.hpp"
#include "vqadiff/canny.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/geometry.hpp"
#include "vqadiff/structure_gen.hpp"
#include "vqadiff/vqa_pipeline.hpp"

namespace vqadiff {

struct RingConfig {
  int n_views = geometry::kDefaultViews;
  double elevation_deg = geometry::kDefaultElevationDeg;
  double radius = geometry::kDefaultRadius;
  double start_azimuth_deg = 0;
  int image_size = geometry::kDefaultImageSize;
  double fov_deg = geometry::kDefaultFovDeg;

  geometry::CameraRing ring() const;
  nlohmann::json to_json() const;
};

struct RefineConfig {
  bool enabled = false;
  vqa::ScoringMode scorer = vqa::ScoringMode::img2img;
  int max_iters = 5;
  double epsilon = 0.01;
  std::optional<std::filesystem::path> template_bank;  // JSON list; built-in bank when unset
  std::string reference_caption;                       // required by txt2txt

  vqa::QuestionTemplateBank bank() const;
};

struct EvalConfig {
  std::string method_label = "Ours";
  std::string vqa_template = "Does this image show {prompt}?";
  std::string fixture_table = "pascal3d";
  std::string fixture_method = "Ours";
  std::optional<std::filesystem::path> csv_path;  // default <cache_dir>/aggregate.csv
};

struct PipelineConfig {
  std::map<backends::BackendKind, backends::BackendDescriptor> backends = backends::stub_descriptors();
  RingConfig ring;
  structure::Layout layout;
  appearance::CannyParams canny;
  structure::TrainingConfig training;
  std::string training_endpoint = "stub";
  std::uint64_t seed = 0;
  double consistency_threshold = 0.85;
  int max_in_flight = 4;
  RefineConfig refine;
  EvalConfig eval;
  std::filesystem::path cache_dir = "vqadiff-cache";
  std::optional<std::filesystem::path> fixtures_path;
  std::optional<std::filesystem::path> experts_path;
  std::optional<std::filesystem::path> vqa_fixtures_path;  // stub VQA answer table

  // Relative paths in the file resolve against the file's directory.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  // Content-only view for provenance and cache keys: no filesystem locations.
  nlohmann::json provenance_json() const;

  // Reports every problem in one config error.
  void validate() const;
  std::filesystem::path csv_path() const;
};

std::unique_ptr<backends::Backends> make_backends(const PipelineConfig& cfg, std::shared_ptr<backends::TraceLog> trace);

// Exit codes: 0 success, 2 config, 3 backend, 4 validation.
int exit_code_for(ErrorCode code);

}  // namespace vqadiff
