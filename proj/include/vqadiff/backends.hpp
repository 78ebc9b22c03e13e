#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vqadiff/image.hpp"

// Capability interfaces for every external model the pipeline drives, the
// call trace that makes runs auditable, and the Backends facade that the
// pipeline stages talk to. Concrete implementations live in
// stub_backends.hpp (deterministic, offline) and http_backends.hpp.
namespace vqadiff::backends {

enum class BackendKind { vqa, text2image, image2image, edge2image, segment, embed };
enum class SeedPolicy { caller, fixed, random };
enum class Modality { image, text, multimodal };

std::string_view to_string(BackendKind kind);
std::string_view to_string(SeedPolicy policy);
std::string_view to_string(Modality modality);
BackendKind kind_from_string(std::string_view s);
SeedPolicy seed_policy_from_string(std::string_view s);

inline constexpr BackendKind kAllKinds[] = {BackendKind::vqa,        BackendKind::text2image,
                                            BackendKind::image2image, BackendKind::edge2image,
                                            BackendKind::segment,    BackendKind::embed};

inline constexpr int kDefaultSteps = 50;
inline constexpr double kDefaultGuidance = 7.5;

struct BackendDescriptor {
  BackendKind kind = BackendKind::vqa;
  std::string endpoint = "stub";  // base URL, or the literal "stub"
  std::string model_id;
  double timeout_s = 60.0;
  SeedPolicy seed_policy = SeedPolicy::caller;
  std::uint64_t fixed_seed = 0;  // used when seed_policy == fixed
  int max_in_flight = 4;
  int max_retries = 2;
  int backoff_ms = 250;

  bool is_stub() const { return endpoint == "stub"; }
  void validate() const;
  nlohmann::json to_json() const;
  static BackendDescriptor from_json(const nlohmann::json& j, std::optional<BackendKind> kind = std::nullopt);
  // Identity of the model behind the descriptor, excluding transport tuning.
  std::string digest() const;
};

struct GenerationRequest {
  std::string prompt;
  std::optional<Image> init_image;
  std::optional<Image> condition_image;
  std::optional<std::vector<double>> subject_embedding;
  std::uint64_t seed = 0;
  int steps = kDefaultSteps;
  double guidance = kDefaultGuidance;
  int width = 256;
  int height = 256;
  // Pipeline stage tag recorded in the trace ("structure.anchor", "appearance.view.03", ...).
  std::string stage;
};

void validate_request(BackendKind kind, const GenerationRequest& req);
// Content digest of every field that can influence the output (stage tag excluded).
std::string request_digest(BackendKind kind, const GenerationRequest& req);

struct EmbeddingVector {
  std::vector<double> values;
  Modality modality = Modality::image;

  std::size_t dim() const { return values.size(); }
  std::string digest() const;
};

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);
double cosine(const std::vector<double>& a, const std::vector<double>& b);
// Scales to unit L2 norm; throws numerical_failure for zero or non-finite input.
std::vector<double> normalized(std::vector<double> v);

struct SegmentationResult {
  Image mask;          // single channel, values 0/1, input resolution
  bool empty = false;  // no foreground found
};

class VqaBackend {
 public:
  virtual ~VqaBackend() = default;
  virtual std::string answer(const Image& image, const std::string& question) = 0;
  // Probability in [0,1] that the answer to a yes/no question is "yes".
  virtual double yes_probability(const Image& image, const std::string& question) = 0;
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual Image generate(const GenerationRequest& req) = 0;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual EmbeddingVector embed_image(const Image& image) = 0;
  virtual EmbeddingVector embed_text(const std::string& text) = 0;
  virtual EmbeddingVector embed_multimodal(const Image& image, const std::string& text) = 0;
  // Image-text contrastive similarity; the default is the cosine of the two unimodal embeddings.
  virtual double itc(const Image& image, const std::string& text);
};

class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;
  virtual SegmentationResult segment_foreground(const Image& image) = 0;
};

// ---------------------------------------------------------------------------
// Trace log

struct TraceRecord {
  std::string op;  // vqa.answer, vqa.yes_probability, generate, embed.image, embed.text, embed.multimodal, itc, segment
  BackendKind kind = BackendKind::vqa;
  std::string model_id;
  std::string stage;
  std::string request_digest;
  std::string response_digest;
  double latency_ms = 0;
  bool ok = true;
  std::string error;

  nlohmann::json to_json() const;
  static TraceRecord from_json(const nlohmann::json& j);
};

// Thread-safe; optionally mirrors every record to a JSON-lines file.
class TraceLog {
 public:
  TraceLog() = default;
  explicit TraceLog(const std::filesystem::path& file);

  void record(TraceRecord r);
  std::vector<TraceRecord> records() const;
  std::size_t count(std::string_view op, std::string_view stage_prefix = {}) const;
  void clear();

  static std::vector<TraceRecord> load(const std::filesystem::path& file);

 private:
  mutable std::mutex mu_;
  std::vector<TraceRecord> records_;
  std::optional<std::ofstream> sink_;
};

// Digest-bearing call summary copied into provenance (no latency, so it is replay-stable).
struct CallSummary {
  std::string op;
  std::string stage;
  std::string model_id;
  std::string request_digest;
  std::string response_digest;

  nlohmann::json to_json() const;
  static CallSummary from_json(const nlohmann::json& j);
  friend bool operator==(const CallSummary&, const CallSummary&) = default;
};

// True when every summary has a matching successful record in the trace.
bool verify_calls(const std::vector<CallSummary>& calls, const std::vector<TraceRecord>& trace);

// ---------------------------------------------------------------------------
// Facade

struct BackendHandles {
  std::shared_ptr<VqaBackend> vqa;
  std::shared_ptr<EmbeddingBackend> embed;
  std::shared_ptr<SegmentationBackend> segment;
};

// Routes pipeline calls to concrete backends, records each call in the trace
// and returns a CallSummary alongside the result so stages can build provenance.
class Backends {
 public:
  explicit Backends(std::map<BackendKind, BackendDescriptor> descriptors,
                    std::shared_ptr<TraceLog> trace = std::make_shared<TraceLog>());

  // Inject pre-built implementations (tests, custom fixtures). Generation
  // backends are keyed by descriptor model_id.
  void set_vqa(std::shared_ptr<VqaBackend> b);
  void set_embedding(std::shared_ptr<EmbeddingBackend> b);
  void set_segmentation(std::shared_ptr<SegmentationBackend> b);
  void set_generation(const std::string& model_id, std::shared_ptr<GenerationBackend> b);

  const BackendDescriptor& descriptor(BackendKind kind) const;
  const std::map<BackendKind, BackendDescriptor>& descriptors() const { return descriptors_; }
  TraceLog& trace() { return *trace_; }
  std::shared_ptr<TraceLog> trace_ptr() const { return trace_; }

  std::string vqa_answer(const Image& image, const std::string& question, const std::string& stage,
                         CallSummary* call = nullptr);
  double vqa_yes_probability(const Image& image, const std::string& question, const std::string& stage,
                             CallSummary* call = nullptr);

  // Generation through the default backend of `kind`.
  Image generate(BackendKind kind, GenerationRequest req, CallSummary* call = nullptr);
  // Generation through an explicit (expert) descriptor.
  Image generate_with(const BackendDescriptor& desc, GenerationRequest req, CallSummary* call = nullptr);

  EmbeddingVector embed_image(const Image& image, const std::string& stage, CallSummary* call = nullptr);
  EmbeddingVector embed_text(const std::string& text, const std::string& stage, CallSummary* call = nullptr);
  EmbeddingVector embed_multimodal(const Image& image, const std::string& text, const std::string& stage,
                                   CallSummary* call = nullptr);
  double itc(const Image& image, const std::string& text, const std::string& stage, CallSummary* call = nullptr);

  SegmentationResult segment_foreground(const Image& image, const std::string& stage, CallSummary* call = nullptr);

 private:
  GenerationBackend& generation_for(const BackendDescriptor& desc);
  template <typename Fn>
  auto traced(std::string op, BackendKind kind, const std::string& model_id, const std::string& stage,
              std::string request_digest, CallSummary* call, Fn&& fn);

  std::map<BackendKind, BackendDescriptor> descriptors_;
  std::shared_ptr<TraceLog> trace_;
  std::mutex mu_;
  BackendHandles handles_;
  std::map<std::string, std::shared_ptr<GenerationBackend>> generators_;
};

// Descriptors for an all-stub configuration.
std::map<BackendKind, BackendDescriptor> stub_descriptors();

// Applies VQADIFF_BACKEND_<KIND>_URL and VQADIFF_BACKEND_TIMEOUT_S.
void apply_env_overrides(std::map<BackendKind, BackendDescriptor>& descriptors);

// Builds the concrete implementation for a descriptor (stub or HTTP).
std::shared_ptr<GenerationBackend> make_generation_backend(const BackendDescriptor& desc);
std::shared_ptr<VqaBackend> make_vqa_backend(const BackendDescriptor& desc);
std::shared_ptr<EmbeddingBackend> make_embedding_backend(const BackendDescriptor& desc);
std::shared_ptr<SegmentationBackend> make_segmentation_backend(const BackendDescriptor& desc);

}  // namespace vqadiff::backends
