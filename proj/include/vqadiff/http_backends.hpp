#pragma once

#include <memory>
#include <semaphore>
#include <string>

#include "json.hpp"
#include "vqadiff/backends.hpp"

// JSON-over-HTTP clients. Rasters travel as base64-encoded PNG.
//
//   POST /vqa             {"image","question","mode":"answer"|"yes_probability"}
//                         -> {"answer"} | {"yes_probability"}
//   POST /generate/<kind> {"prompt","seed","steps","guidance","width","height","model_id",
//                          "init_image"?,"condition_image"?,"subject_embedding"?}
//                         -> {"image"}
//   POST /embed           {"modality":"image"|"text"|"multimodal"|"itc","image"?,"text"?,"model_id"}
//                         -> {"values":[...]} | {"score"}
//   POST /segment         {"image"} -> {"mask","empty"}
//
// Every request carries an Idempotency-Key header (request digest). Requests
// are only retried when that key is present; 5xx answers and transport
// failures are retried up to max_retries with exponential backoff.
namespace vqadiff::backends {

class HttpTransport {
 public:
  explicit HttpTransport(BackendDescriptor desc);

  nlohmann::json post(const std::string& path, const nlohmann::json& body, const std::string& idempotency_key);
  nlohmann::json get(const std::string& path);

  const BackendDescriptor& descriptor() const { return desc_; }

 private:
  nlohmann::json send(const std::string& method, const std::string& path, const nlohmann::json* body,
                      const std::string& idempotency_key);

  BackendDescriptor desc_;
  std::string scheme_host_port_;
  std::string base_path_;
  std::unique_ptr<std::counting_semaphore<64>> slots_;
};

std::string encode_image_field(const Image& img);
Image decode_image_field(const nlohmann::json& field);

class HttpVqa final : public VqaBackend {
 public:
  explicit HttpVqa(BackendDescriptor desc) : http_(std::move(desc)) {}
  std::string answer(const Image& image, const std::string& question) override;
  double yes_probability(const Image& image, const std::string& question) override;

 private:
  HttpTransport http_;
};

class HttpGeneration final : public GenerationBackend {
 public:
  explicit HttpGeneration(BackendDescriptor desc) : http_(std::move(desc)) {}
  Image generate(const GenerationRequest& req) override;

 private:
  HttpTransport http_;
};

class HttpEmbedding final : public EmbeddingBackend {
 public:
  explicit HttpEmbedding(BackendDescriptor desc) : http_(std::move(desc)) {}
  EmbeddingVector embed_image(const Image& image) override;
  EmbeddingVector embed_text(const std::string& text) override;
  EmbeddingVector embed_multimodal(const Image& image, const std::string& text) override;
  double itc(const Image& image, const std::string& text) override;

 private:
  EmbeddingVector call(Modality modality, const Image* image, const std::string* text);
  HttpTransport http_;
};

class HttpSegmentation final : public SegmentationBackend {
 public:
  explicit HttpSegmentation(BackendDescriptor desc) : http_(std::move(desc)) {}
  SegmentationResult segment_foreground(const Image& image) override;

 private:
  HttpTransport http_;
};

// Wire helpers shared by clients and test servers.
nlohmann::json generation_request_to_json(const GenerationRequest& req, const std::string& model_id);
GenerationRequest generation_request_from_json(const nlohmann::json& j);

}  // namespace vqadiff::backends
