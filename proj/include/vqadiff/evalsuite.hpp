#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqadiff/appearance_gen.hpp"
#include "vqadiff/backends.hpp"
#include "vqadiff/image.hpp"

namespace vqadiff::eval {

inline constexpr const char* kVqaScoreTemplate = "Does this image show {prompt}?";
inline constexpr const char* kMetricNames[] = {"itc", "clip", "fid", "vqa"};

struct FeatureSet {
  std::vector<std::vector<double>> vectors;
  std::string extractor_id;

  void validate() const;
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

double fid(const FeatureSet& a, const FeatureSet& b);

double clip_similarity(backends::Backends& be, std::span<const Image> generated, const Image& reference);
double itc_score(backends::Backends& be, std::span<const Image> views, const std::string& prompt_text);
double vqa_score(backends::Backends& be, std::span<const Image> views, const std::string& prompt_text,
                 const std::string& question_template = kVqaScoreTemplate);
double txt2txt_score(backends::Backends& be, const std::string& answer, const std::string& caption);

// Image-embedding features for FID.
FeatureSet image_features(backends::Backends& be, std::span<const Image> images, const std::string& stage);

// Horizontal mirror; pads a single reference image to the two samples FID needs.
Image mirror(const Image& img);

// Paper reference rows: table -> method -> metric -> value (null where the table has "--").
struct Fixtures {
  using Row = std::map<std::string, std::optional<double>>;
  std::map<std::string, std::map<std::string, Row>> tables;

  static Fixtures load(const std::filesystem::path& path);
  static Fixtures from_json(const nlohmann::json& j);
  const Row& row(const std::string& table, const std::string& method) const;
};

struct EvalReport {
  double itc = 0;
  double clip_similarity = 0;
  double fid = 0;
  double vqa_score = 0;
  int n_views = 0;
  std::string method_label;
  std::optional<std::map<std::string, double>> fixture_delta;  // measured - paper, per metric
  nlohmann::json corpus = nlohmann::json::object();           // which views/references entered each metric

  void validate() const;
  std::map<std::string, double> metrics() const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Metrics absent from the fixture row (null or missing) are skipped.
std::map<std::string, double> fixture_deltas(const EvalReport& report, const Fixtures::Row& row);

struct EvalOptions {
  std::string method_label = "Ours";
  std::string vqa_template = kVqaScoreTemplate;
  std::optional<Fixtures> fixtures;
  std::string fixture_table = "pascal3d";
  std::string fixture_method = "Ours";
};

EvalReport evaluate_bundle(backends::Backends& be, const appearance::AssetBundle& bundle, const Image& reference,
                           const std::string& prompt_text, const EvalOptions& opts = {});

// Appends one row per report; writes the header when the file is new.
void append_csv(const std::filesystem::path& csv, const std::string& bundle_id, const EvalReport& report);
std::size_t csv_rows(const std::filesystem::path& csv);

}  // namespace vqadiff::eval
