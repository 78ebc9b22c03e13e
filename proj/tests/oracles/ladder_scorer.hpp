#pragma once

// Scorer where question specificity strictly orders the scores.

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "vqadiff/backends.hpp"
#include "vqadiff/stub_backends.hpp"
#include "vqadiff/vqa_pipeline.hpp"

namespace ladder {

using namespace vqadiff;
using namespace vqadiff::backends;
using namespace vqadiff::vqa;

inline const std::string kVague = "What is this image?";
inline const std::string kSpecific = "What car is it?";

// Answers get more specific as the question does.
struct LadderVqa final : VqaBackend {
  std::mutex mu;
  std::vector<std::string> asked;
  std::map<std::string, std::string> answers{
      {kVague, "a car"},
      {kSpecific, "a Dodge pickup truck"},
      {kCanonicalQuestion, "2014 Dodge Ram 1500, a full-size pick-up truck with a crew cab"},
  };
  std::string answer(const Image&, const std::string& q) override {
    std::lock_guard lock(mu);
    asked.push_back(q);
    auto it = answers.find(q);
    return it == answers.end() ? "a vehicle" : it->second;
  }
  double yes_probability(const Image&, const std::string&) override { return 0.5; }
};

// Text embedding on the unit circle: the angle to the caption shrinks with the
// answer's specificity level, so cosine scores are ordered by construction.
struct LadderEmbedding final : EmbeddingBackend {
  std::map<std::string, int> level{{"a car", 1}, {"a Dodge pickup truck", 2},
                                   {"2014 Dodge Ram 1500, a full-size pick-up truck with a crew cab", 3}};
  static EmbeddingVector at(double angle, Modality m) { return {{std::cos(angle), std::sin(angle)}, m}; }
  EmbeddingVector embed_image(const Image&) override { return at(0, Modality::image); }
  EmbeddingVector embed_text(const std::string& t) override {
    if (t == "caption") return at(0, Modality::text);
    auto it = level.find(t);
    const int l = it == level.end() ? 0 : it->second;
    return at(1.2 - 0.3 * l, Modality::text);
  }
  EmbeddingVector embed_multimodal(const Image&, const std::string& t) override { return embed_text(t); }
};

inline QuestionTemplateBank ladder_bank() { return {{kVague, kSpecific, kCanonicalQuestion}, 2}; }

inline std::unique_ptr<Backends> ladder_backends(std::shared_ptr<LadderVqa> vqa) {
  auto be = std::make_unique<Backends>(stub_descriptors());
  be->set_vqa(vqa);
  be->set_embedding(std::make_shared<LadderEmbedding>());
  return be;
}

inline RefineOptions txt_options() {
  RefineOptions o;
  o.scorer = ScoringMode::txt2txt;
  o.reference_caption = "caption";
  return o;
}

}  // namespace ladder
