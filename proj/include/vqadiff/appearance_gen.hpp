#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqadiff/backends.hpp"
#include "vqadiff/canny.hpp"
#include "vqadiff/geometry.hpp"
#include "vqadiff/structure_gen.hpp"
#include "vqadiff/vqa_pipeline.hpp"

namespace vqadiff::appearance {

struct AppearanceOptions {
  CannyParams canny;
  std::size_t max_in_flight = 4;
  // Keep going when some views fail; failed indices are recorded and left empty.
  bool allow_partial = false;
};

struct AssetBundle {
  std::vector<Image> views;
  std::vector<EdgeMap> edge_maps;
  // Structure views are not exported; after load_bundle only their digests
  // and call records remain.
  structure::StructureViews structure;
  std::vector<std::string> structure_digests;
  geometry::CameraRing ring;
  vqa::VehiclePrompt prompt;
  std::string subject_digest;
  std::uint64_t seed = 0;
  CannyParams canny;
  std::vector<backends::CallSummary> subject_calls;
  std::vector<backends::CallSummary> appearance_calls;  // index i -> view i
  std::vector<int> failed_views;
  std::vector<std::string> warnings;
  // Caller-supplied context (pipeline config, expert set) copied into provenance.
  nlohmann::json context = nlohmann::json::object();

  nlohmann::json provenance() const;
  // Every recorded call has a matching successful trace record.
  bool verify(const std::vector<backends::TraceRecord>& trace) const;
};

// Per view i: canny(structure view i), then one edge-to-image call with the
// prompt answer, the subject embedding and seed + i.
AssetBundle render_appearance(backends::Backends& be, const structure::StructureViews& structure,
                              const backends::EmbeddingVector& subject, const vqa::VehiclePrompt& prompt,
                              std::uint64_t seed, const AppearanceOptions& opts = {});

// view_XX.png, edge_XX.png, poses.json, prompt.json, provenance.json.
void export_bundle(const AssetBundle& bundle, const std::filesystem::path& out_dir);
AssetBundle load_bundle(const std::filesystem::path& dir);

// Names every missing or unreadable bundle file; empty when the bundle is complete.
std::vector<std::string> check_bundle(const std::filesystem::path& dir);

std::string edge_file_name(int index);  // "edge_07.png"

}  // namespace vqadiff::appearance
