#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqadiff/backends.hpp"
#include "vqadiff/cache.hpp"
#include "vqadiff/config.hpp"
#include "vqadiff/evalsuite.hpp"
#include "vqadiff/structure_gen.hpp"

namespace vqadiff {

struct IndexEntry {
  std::string id;
  std::filesystem::path model_path;
  std::optional<geometry::Vec3> bbox_min, bbox_max;  // read from the OBJ when absent
};

// JSON list of {"id", "model_path", optional "bbox_min"/"bbox_max"}; relative
// model paths resolve against the index file's directory.
std::vector<IndexEntry> load_index(const std::filesystem::path& path);

struct BuildDatasetOptions {
  std::filesystem::path index;
  std::filesystem::path render_root;
};

struct BuildDatasetResult {
  std::vector<std::filesystem::path> manifests;
  std::filesystem::path dataset_dir;
  std::size_t pairs = 0;
  int prompts_written = 0;
  bool cached = false;
};

// Writes one render manifest per instance into render_root/<id>/. When every
// view has been rendered, labels view 0 with the canonical question and
// builds the training-pair datasets (cached by content).
BuildDatasetResult cmd_build_dataset(const PipelineConfig& cfg, const BuildDatasetOptions& opts,
                                     backends::Backends& be);

struct TrainResult {
  std::filesystem::path experts_path;
  std::size_t jobs = 0;
  bool cached = false;
};

TrainResult cmd_train_experts(const PipelineConfig& cfg, const std::filesystem::path& dataset_dir,
                              structure::TrainingBackend* trainer = nullptr);

struct GenerateOptions {
  std::filesystem::path image;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> prompt_override;
  std::optional<std::string> prompt_suffix;
  std::optional<std::string> reference_transform;  // image-to-image instruction applied before VQA
  std::optional<std::filesystem::path> out_dir;    // copy of the bundle
};

struct GenerateResult {
  std::filesystem::path bundle_dir;
  std::vector<std::string> warnings;
  std::map<std::string, bool> cache_hits;  // stage -> hit
};

GenerateResult cmd_generate(const PipelineConfig& cfg, const GenerateOptions& opts, backends::Backends& be);

struct EvaluateOptions {
  std::filesystem::path bundle_dir;
  std::filesystem::path reference;
  std::optional<std::string> prompt_text;  // defaults to the bundle prompt answer
};

struct EvaluateResult {
  std::filesystem::path report_path;
  eval::EvalReport report;
  bool cached = false;
};

EvaluateResult cmd_evaluate(const PipelineConfig& cfg, const EvaluateOptions& opts, backends::Backends& be);

AuditReport cmd_audit_cache(const PipelineConfig& cfg);

// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vqadiff
