#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqadiff/backends.hpp"
#include "vqadiff/geometry.hpp"
#include "vqadiff/gridcodec.hpp"
#include "vqadiff/vqa_pipeline.hpp"

namespace vqadiff::structure {

struct TrainingConfig {
  int epochs = 50;
  double learning_rate = 1e-5;
  int batch_size = 1;
  std::string optimizer_name = "adam";
  std::string base_model_id = "sd-v1.5";

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

// multi_expert: 1 text-to-grid anchor model + one image-to-grid model per anchor.
// single_dm: one text-to-grid model emitting all views as a k x k grid (k = 3 or 4).
enum class LayoutMode { multi_expert, single_dm };
std::string_view to_string(LayoutMode m);
LayoutMode layout_from_string(std::string_view s);

struct Layout {
  LayoutMode mode = LayoutMode::multi_expert;
  int n_views = 16;
  int stride = 4;      // multi_expert only
  int grid_k = 4;      // single_dm only; n_views == grid_k^2

  void validate() const;
  grid::ExpertAssignment assignment() const;  // multi_expert only
  nlohmann::json to_json() const;
  static Layout from_json(const nlohmann::json& j);
  friend bool operator==(const Layout&, const Layout&) = default;
};

// ---------------------------------------------------------------------------
// Training data

struct TrainingPair {
  std::string instance_id;
  std::string expert_id;      // "anchor", "neighbor_<k>" or "single"
  std::string prompt;         // anchor / single datasets
  std::string anchor_path;    // neighbor datasets
  std::string target_grid_path;  // relative to the manifest directory

  nlohmann::json to_json() const;
  static TrainingPair from_json(const nlohmann::json& j);
};

struct DatasetManifest {
  std::string expert_id;
  std::filesystem::path path;  // JSON-lines file
  std::vector<TrainingPair> pairs;
  // Covers prompts and the content digests of every referenced image.
  std::string digest;
};

struct TrainingManifests {
  Layout layout;
  std::vector<std::string> instances;
  std::vector<DatasetManifest> datasets;  // anchor first, then neighbor_0..; or a single "single" dataset

  std::size_t pair_count() const;
};

// Instances are the subdirectories of render_root holding view_XX.png files.
// Each needs prompt.json (a serialized VehiclePrompt); see ensure_prompts.
TrainingManifests build_training_pairs(const std::filesystem::path& render_root, const Layout& layout,
                                       const std::filesystem::path& out_dir);

// Writes prompt.json for instances that lack one by asking the canonical
// question about view 0. Returns the number of prompts written.
int ensure_prompts(backends::Backends& be, const std::filesystem::path& render_root, int n_views);

std::vector<std::string> list_instances(const std::filesystem::path& render_root);

// datasets.json index next to the JSON-lines manifests.
void save_manifests(const TrainingManifests& m, const std::filesystem::path& dir);
TrainingManifests load_manifests(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training jobs

struct TrainingJobSpec {
  std::string expert_id;
  backends::BackendKind kind = backends::BackendKind::text2image;
  std::string dataset_path;
  std::string dataset_digest;
  TrainingConfig config;

  nlohmann::json to_json() const;
};

struct TrainingJobStatus {
  std::string job_id;
  std::string state;  // queued | running | succeeded | failed
  std::string model_id;
  std::string log_ref;
};

class TrainingBackend {
 public:
  virtual ~TrainingBackend() = default;
  virtual std::string submit(const TrainingJobSpec& spec) = 0;
  virtual TrainingJobStatus poll(const std::string& job_id) = 0;
};

// Records submitted jobs and completes them immediately with a model id
// derived from the dataset and config digests.
class StubTrainingBackend final : public TrainingBackend {
 public:
  std::string submit(const TrainingJobSpec& spec) override;
  TrainingJobStatus poll(const std::string& job_id) override;

  std::vector<TrainingJobSpec> jobs() const;
  void fail_expert(const std::string& expert_id) { failing_.push_back(expert_id); }

 private:
  mutable std::mutex mu_;
  std::vector<TrainingJobSpec> jobs_;
  std::vector<std::string> failing_;
};

// POST /train -> {job_id}; GET /train/<id> -> {state, model_id, log}.
// endpoint "stub" selects StubTrainingBackend.
std::unique_ptr<TrainingBackend> make_training_backend(const std::string& endpoint, double timeout_s = 60.0);

struct ExpertSet {
  Layout layout;
  backends::BackendDescriptor anchor_expert;               // text2image; the single model in single_dm
  std::vector<backends::BackendDescriptor> neighbor_experts;  // image2image, one per anchor
  TrainingConfig training_config;
  nlohmann::json provenance = nlohmann::json::object();

  grid::ExpertAssignment assignment() const { return layout.assignment(); }
  void validate() const;
  std::string digest() const;
  nlohmann::json to_json() const;
  static ExpertSet from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;  // experts.json
  static ExpertSet load(const std::filesystem::path& path);
};

// Untrained expert set bound to the configured generation backends, with
// per-expert model ids derived from the base descriptors.
ExpertSet default_experts(const std::map<backends::BackendKind, backends::BackendDescriptor>& descriptors,
                          const Layout& layout, const TrainingConfig& config = {});

struct TrainOptions {
  std::size_t max_in_flight = 5;
  int poll_interval_ms = 1000;
  double timeout_s = 7 * 24 * 3600.0;
};

// Submits one fine-tune job per dataset and waits for all of them.
ExpertSet train_experts(const TrainingManifests& manifests, const TrainingConfig& config, TrainingBackend& trainer,
                        const std::map<backends::BackendKind, backends::BackendDescriptor>& descriptors,
                        const TrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Inference

struct StructureOptions {
  double consistency_threshold = 0.85;
  std::size_t max_in_flight = 4;
};

struct StructureViews {
  std::vector<Image> views;
  geometry::CameraRing ring;
  vqa::VehiclePrompt prompt;
  std::vector<double> anchor_consistency;
  std::vector<std::string> warnings;
  std::vector<backends::CallSummary> calls;  // generation calls, in expert order
  std::vector<std::uint64_t> seeds;          // per call, same order
};

StructureViews generate_structures(backends::Backends& be, const vqa::VehiclePrompt& prompt, const ExpertSet& experts,
                                   std::uint64_t seed, const geometry::CameraRing& ring,
                                   const StructureOptions& opts = {});

}  // namespace vqadiff::structure
