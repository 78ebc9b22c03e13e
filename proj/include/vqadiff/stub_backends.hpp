#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vqadiff/backends.hpp"

// Deterministic offline implementations. Every output is a pure function of
// the declared inputs, so recorded pipelines replay bit-exactly.
namespace vqadiff::backends {

struct VqaFixtures {
  // (image digest or "*", question) -> answer
  std::map<std::pair<std::string, std::string>, std::string> answers;
  // Fallback pool indexed by hash(image digest, question).
  std::vector<std::string> pool;
  // Constant yes-probability; when unset it is derived from the input hash.
  std::optional<double> yes_probability;

  static VqaFixtures defaults();
  static VqaFixtures load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

class StubVqa final : public VqaBackend {
 public:
  explicit StubVqa(VqaFixtures fixtures = VqaFixtures::defaults());

  std::string answer(const Image& image, const std::string& question) override;
  double yes_probability(const Image& image, const std::string& question) override;

 private:
  VqaFixtures fixtures_;
};

struct StubGenerationOptions {
  // image2image: copy init_image verbatim into quadrant 0 when the output is a
  // 2x2 grid of init-sized views (identity neighbour expert).
  bool echo_init = false;
};

// Seeded value noise under a prompt-coloured vehicle silhouette. The output
// mixes in the model id, seed, prompt, sampler settings and the digests of the
// init image, condition image and subject embedding.
class StubGeneration final : public GenerationBackend {
 public:
  StubGeneration(BackendKind kind, std::string model_id, StubGenerationOptions opts = {});

  Image generate(const GenerationRequest& req) override;

 private:
  BackendKind kind_;
  std::string model_id_;
  StubGenerationOptions opts_;
};

// Seeded random projection of content features (8x8 colour pooling for
// images, hashed character trigrams for text), unit-normalized.
class StubEmbedding final : public EmbeddingBackend {
 public:
  explicit StubEmbedding(std::string model_id = "stub-embed", int dim = 64);

  EmbeddingVector embed_image(const Image& image) override;
  EmbeddingVector embed_text(const std::string& text) override;
  EmbeddingVector embed_multimodal(const Image& image, const std::string& text) override;

  int dim() const { return dim_; }

 private:
  std::vector<double> project(const std::vector<double>& features, std::uint64_t salt) const;

  std::string model_id_;
  int dim_;
  std::uint64_t key_;
};

// Background is the most frequent border colour; the mask is the largest
// 4-connected component of non-background pixels.
class StubSegmentation final : public SegmentationBackend {
 public:
  SegmentationResult segment_foreground(const Image& image) override;
};

}  // namespace vqadiff::backends
