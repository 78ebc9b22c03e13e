#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqadiff/backends.hpp"
#include "vqadiff/image.hpp"

namespace vqadiff::vqa {

inline constexpr const char* kCanonicalQuestion =
    "What are the model, manufacture, production year, and main features of this vehicle?";

struct TraceEntry {
  std::string question;
  std::string answer;
  double score = 0;
  int round = 0;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct VehiclePrompt {
  std::string question;
  std::string answer;
  // Successive improvements of the best candidate; scores strictly increase.
  std::vector<TraceEntry> refinement_trace;
  // Every candidate that was asked and scored, in evaluation order.
  std::vector<TraceEntry> evaluations;
  double score = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static VehiclePrompt from_json(const nlohmann::json& j);
  friend bool operator==(const VehiclePrompt&, const VehiclePrompt&) = default;
};

// Ordered question templates. Slots {model}, {manufacturer}, {year} and
// {features} are filled from the current best answer during refinement.
struct QuestionTemplateBank {
  std::vector<std::string> templates;
  std::size_t canonical_index = 0;

  static QuestionTemplateBank defaults();
  static QuestionTemplateBank load(const std::filesystem::path& path);  // JSON list of strings
  void validate() const;
};

// Attribute slots parsed out of an answer such as
// "2014 Dodge Ram 1500, a full-size pick-up truck with ...".
std::map<std::string, std::string> parse_attributes(const std::string& answer);

// Returns nullopt when a slot referenced by the template has no value.
std::optional<std::string> instantiate(const std::string& tmpl, const std::map<std::string, std::string>& slots);

enum class ScoringMode { txt2txt, img2img };

struct RefineOptions {
  ScoringMode scorer = ScoringMode::img2img;
  std::optional<std::string> reference_caption;  // required for txt2txt
  int max_iters = 5;
  double epsilon = 0.01;
  std::uint64_t seed = 0;           // text-to-image seed for img2img scoring
  std::size_t max_in_flight = 4;    // concurrent candidate scoring within a round
};

VehiclePrompt extract_description(backends::Backends& be, const Image& image);

// Greedy question search. Round 1 asks every fillable template; later rounds
// re-instantiate slot templates from the best answer so far and ask only
// questions not yet asked. Stops when a round improves the best score by less
// than epsilon (the baseline before round 1 is -1), when nothing new can be
// asked, or after max_iters rounds.
VehiclePrompt refine_question(backends::Backends& be, const Image& image, const QuestionTemplateBank& bank,
                              const RefineOptions& opts);

struct SubjectEmbedding {
  backends::EmbeddingVector vector;
  bool degraded_mask = false;  // segmentation found no foreground; raw image was used
  std::vector<backends::CallSummary> calls;
};

// Masks out the background, then embeds (masked image, answer) with the multimodal encoder.
SubjectEmbedding subject_embedding(backends::Backends& be, const Image& image, const VehiclePrompt& prompt);

Image apply_mask(const Image& image, const Image& mask);

}  // namespace vqadiff::vqa
