#include "vqadiff/backends.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <random>

#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/http_backends.hpp"
#include "vqadiff/stub_backends.hpp"

namespace vqadiff::backends {

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::vqa: return "vqa";
    case BackendKind::text2image: return "text2image";
    case BackendKind::image2image: return "image2image";
    case BackendKind::edge2image: return "edge2image";
    case BackendKind::segment: return "segment";
    case BackendKind::embed: return "embed";
  }
  return "unknown";
}

std::string_view to_string(SeedPolicy policy) {
  switch (policy) {
    case SeedPolicy::caller: return "caller";
    case SeedPolicy::fixed: return "fixed";
    case SeedPolicy::random: return "random";
  }
  return "unknown";
}

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::image: return "image";
    case Modality::text: return "text";
    case Modality::multimodal: return "multimodal";
  }
  return "unknown";
}

BackendKind kind_from_string(std::string_view s) {
  for (auto k : kAllKinds) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::invalid_argument, "unknown backend kind '" + std::string(s) + "'");
}

SeedPolicy seed_policy_from_string(std::string_view s) {
  for (auto p : {SeedPolicy::caller, SeedPolicy::fixed, SeedPolicy::random}) {
    if (to_string(p) == s) return p;
  }
  fail(ErrorCode::invalid_argument, "unknown seed policy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

void BackendDescriptor::validate() const {
  const std::string who = "backend '" + std::string(to_string(kind)) + "'";
  require(!endpoint.empty(), ErrorCode::config, who + ": endpoint must be a URL or \"stub\"");
  require(is_stub() || endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0, ErrorCode::config,
          who + ": endpoint must start with http:// or https://, or be \"stub\"");
  require(!model_id.empty(), ErrorCode::config, who + ": model_id is required");
  require(timeout_s > 0 && std::isfinite(timeout_s), ErrorCode::config, who + ": timeout_s must be > 0");
  require(!is_stub() || seed_policy == SeedPolicy::caller, ErrorCode::config,
          who + ": stub endpoints require seed_policy \"caller\"");
  require(max_in_flight >= 1 && max_in_flight <= 64, ErrorCode::config, who + ": max_in_flight must be in [1, 64]");
  require(max_retries >= 0 && backoff_ms >= 0, ErrorCode::config, who + ": retry settings must be non-negative");
}

nlohmann::json BackendDescriptor::to_json() const {
  return {{"kind", to_string(kind)},
          {"endpoint", endpoint},
          {"model_id", model_id},
          {"timeout_s", timeout_s},
          {"seed_policy", to_string(seed_policy)},
          {"fixed_seed", fixed_seed},
          {"max_in_flight", max_in_flight},
          {"max_retries", max_retries},
          {"backoff_ms", backoff_ms}};
}

BackendDescriptor BackendDescriptor::from_json(const nlohmann::json& j, std::optional<BackendKind> kind) {
  BackendDescriptor d;
  d.kind = kind ? *kind : kind_from_string(j.at("kind").get<std::string>());
  d.endpoint = j.value("endpoint", d.endpoint);
  d.model_id = j.value("model_id", std::string("stub-") + std::string(to_string(d.kind)));
  d.timeout_s = j.value("timeout_s", d.timeout_s);
  d.seed_policy = seed_policy_from_string(j.value("seed_policy", std::string("caller")));
  d.fixed_seed = j.value("fixed_seed", d.fixed_seed);
  d.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  d.max_retries = j.value("max_retries", d.max_retries);
  d.backoff_ms = j.value("backoff_ms", d.backoff_ms);
  return d;
}

std::string BackendDescriptor::digest() const {
  return json_digest({{"kind", to_string(kind)},
                      {"endpoint", endpoint},
                      {"model_id", model_id},
                      {"seed_policy", to_string(seed_policy)},
                      {"fixed_seed", fixed_seed}});
}

void validate_request(BackendKind kind, const GenerationRequest& req) {
  require(req.width > 0 && req.height > 0, ErrorCode::invalid_argument, "generate: output size must be positive");
  require(req.steps > 0, ErrorCode::invalid_argument, "generate: steps must be positive");
  require(std::isfinite(req.guidance), ErrorCode::invalid_argument, "generate: guidance must be finite");
  switch (kind) {
    case BackendKind::text2image:
      require(!req.prompt.empty(), ErrorCode::invalid_argument, "text2image request requires a prompt");
      break;
    case BackendKind::image2image:
      require(req.init_image && !req.init_image->empty(), ErrorCode::invalid_argument,
              "image2image request requires init_image");
      break;
    case BackendKind::edge2image:
      require(req.condition_image && !req.condition_image->empty(), ErrorCode::invalid_argument,
              "edge2image request requires condition_image");
      break;
    default:
      fail(ErrorCode::invalid_argument, "backend kind '" + std::string(to_string(kind)) + "' does not generate images");
  }
  if (req.subject_embedding) {
    for (double v : *req.subject_embedding) {
      require(std::isfinite(v), ErrorCode::invalid_argument, "generate: subject embedding must be finite");
    }
  }
}

namespace {

std::string vector_digest(const std::vector<double>& v) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()),
                                                  v.size() * sizeof(double)));
}

}  // namespace

std::string request_digest(BackendKind kind, const GenerationRequest& req) {
  nlohmann::json j = {{"kind", to_string(kind)}, {"prompt", req.prompt},   {"seed", req.seed},
                      {"steps", req.steps},      {"guidance", req.guidance}, {"width", req.width},
                      {"height", req.height}};
  if (req.init_image) j["init_image"] = image_digest(*req.init_image);
  if (req.condition_image) j["condition_image"] = image_digest(*req.condition_image);
  if (req.subject_embedding) j["subject_embedding"] = vector_digest(*req.subject_embedding);
  return json_digest(j);
}

std::string EmbeddingVector::digest() const { return vector_digest(values); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::invalid_argument, "cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0 && nb > 0, ErrorCode::numerical_failure, "cosine: zero vector");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values, b.values); }

std::vector<double> normalized(std::vector<double> v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  require(std::isfinite(n2) && n2 > 0, ErrorCode::numerical_failure, "cannot normalize a zero or non-finite vector");
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

double EmbeddingBackend::itc(const Image& image, const std::string& text) {
  return cosine(embed_image(image), embed_text(text));
}

// ---------------------------------------------------------------------------

nlohmann::json TraceRecord::to_json() const {
  nlohmann::json j = {{"op", op},
                      {"kind", to_string(kind)},
                      {"model_id", model_id},
                      {"stage", stage},
                      {"request_digest", request_digest},
                      {"response_digest", response_digest},
                      {"latency_ms", latency_ms},
                      {"ok", ok}};
  if (!error.empty()) j["error"] = error;
  return j;
}

TraceRecord TraceRecord::from_json(const nlohmann::json& j) {
  TraceRecord r;
  r.op = j.at("op").get<std::string>();
  r.kind = kind_from_string(j.at("kind").get<std::string>());
  r.model_id = j.value("model_id", "");
  r.stage = j.value("stage", "");
  r.request_digest = j.value("request_digest", "");
  r.response_digest = j.value("response_digest", "");
  r.latency_ms = j.value("latency_ms", 0.0);
  r.ok = j.value("ok", true);
  r.error = j.value("error", "");
  return r;
}

TraceLog::TraceLog(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  sink_.emplace(file, std::ios::app);
  if (!*sink_) fail(ErrorCode::io, "cannot open trace log " + file.string());
}

void TraceLog::record(TraceRecord r) {
  std::lock_guard lock(mu_);
  if (sink_) {
    *sink_ << r.to_json().dump() << '\n';
    sink_->flush();
  }
  records_.push_back(std::move(r));
}

std::vector<TraceRecord> TraceLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t TraceLog::count(std::string_view op, std::string_view stage_prefix) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& r : records_) {
    if (r.op == op && r.stage.compare(0, stage_prefix.size(), stage_prefix) == 0) ++n;
  }
  return n;
}

void TraceLog::clear() {
  std::lock_guard lock(mu_);
  records_.clear();
}

std::vector<TraceRecord> TraceLog::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::io, "cannot open trace log " + file.string());
  std::vector<TraceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(TraceRecord::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

nlohmann::json CallSummary::to_json() const {
  return {{"op", op},
          {"stage", stage},
          {"model_id", model_id},
          {"request_digest", request_digest},
          {"response_digest", response_digest}};
}

CallSummary CallSummary::from_json(const nlohmann::json& j) {
  return {j.at("op").get<std::string>(), j.at("stage").get<std::string>(), j.at("model_id").get<std::string>(),
          j.at("request_digest").get<std::string>(), j.at("response_digest").get<std::string>()};
}

bool verify_calls(const std::vector<CallSummary>& calls, const std::vector<TraceRecord>& trace) {
  for (const auto& c : calls) {
    bool found = false;
    for (const auto& r : trace) {
      if (r.ok && r.op == c.op && r.request_digest == c.request_digest && r.response_digest == c.response_digest &&
          r.model_id == c.model_id) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

Backends::Backends(std::map<BackendKind, BackendDescriptor> descriptors, std::shared_ptr<TraceLog> trace)
    : descriptors_(std::move(descriptors)), trace_(std::move(trace)) {
  for (auto& [kind, d] : descriptors_) {
    d.kind = kind;
    d.validate();
  }
}

void Backends::set_vqa(std::shared_ptr<VqaBackend> b) {
  std::lock_guard lock(mu_);
  handles_.vqa = std::move(b);
}

void Backends::set_embedding(std::shared_ptr<EmbeddingBackend> b) {
  std::lock_guard lock(mu_);
  handles_.embed = std::move(b);
}

void Backends::set_segmentation(std::shared_ptr<SegmentationBackend> b) {
  std::lock_guard lock(mu_);
  handles_.segment = std::move(b);
}

void Backends::set_generation(const std::string& model_id, std::shared_ptr<GenerationBackend> b) {
  std::lock_guard lock(mu_);
  generators_[model_id] = std::move(b);
}

const BackendDescriptor& Backends::descriptor(BackendKind kind) const {
  auto it = descriptors_.find(kind);
  if (it == descriptors_.end()) fail(ErrorCode::config, "no backend configured for '" + std::string(to_string(kind)) + "'");
  return it->second;
}

GenerationBackend& Backends::generation_for(const BackendDescriptor& desc) {
  std::lock_guard lock(mu_);
  auto& slot = generators_[desc.model_id];
  if (!slot) slot = make_generation_backend(desc);
  return *slot;
}

template <typename Fn>
auto Backends::traced(std::string op, BackendKind kind, const std::string& model_id, const std::string& stage,
                      std::string req_digest, CallSummary* call, Fn&& fn) {
  TraceRecord rec;
  rec.op = std::move(op);
  rec.kind = kind;
  rec.model_id = model_id;
  rec.stage = stage;
  rec.request_digest = std::move(req_digest);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count(); };
  try {
    auto [result, resp_digest] = fn();
    rec.latency_ms = elapsed();
    rec.response_digest = resp_digest;
    if (call) *call = {rec.op, rec.stage, rec.model_id, rec.request_digest, rec.response_digest};
    trace_->record(std::move(rec));
    return result;
  } catch (const std::exception& e) {
    rec.latency_ms = elapsed();
    rec.ok = false;
    rec.error = e.what();
    trace_->record(std::move(rec));
    throw;
  }
}

std::string Backends::vqa_answer(const Image& image, const std::string& question, const std::string& stage,
                                 CallSummary* call) {
  require(!question.empty(), ErrorCode::invalid_argument, "vqa: question must not be empty");
  require(!image.empty(), ErrorCode::invalid_argument, "vqa: image must not be empty");
  const auto& d = descriptor(BackendKind::vqa);
  {
    std::lock_guard lock(mu_);
    if (!handles_.vqa) handles_.vqa = make_vqa_backend(d);
  }
  const auto digest = json_digest({{"image", image_digest(image)}, {"question", question}, {"mode", "answer"}});
  return traced("vqa.answer", BackendKind::vqa, d.model_id, stage, digest, call, [&] {
    auto a = handles_.vqa->answer(image, question);
    return std::pair{a, sha256_hex(a)};
  });
}

double Backends::vqa_yes_probability(const Image& image, const std::string& question, const std::string& stage,
                                     CallSummary* call) {
  require(!question.empty(), ErrorCode::invalid_argument, "vqa: question must not be empty");
  const auto& d = descriptor(BackendKind::vqa);
  {
    std::lock_guard lock(mu_);
    if (!handles_.vqa) handles_.vqa = make_vqa_backend(d);
  }
  const auto digest =
      json_digest({{"image", image_digest(image)}, {"question", question}, {"mode", "yes_probability"}});
  return traced("vqa.yes_probability", BackendKind::vqa, d.model_id, stage, digest, call, [&] {
    const double p = handles_.vqa->yes_probability(image, question);
    return std::pair{p, sha256_hex(nlohmann::json(p).dump())};
  });
}

Image Backends::generate(BackendKind kind, GenerationRequest req, CallSummary* call) {
  return generate_with(descriptor(kind), std::move(req), call);
}

Image Backends::generate_with(const BackendDescriptor& desc, GenerationRequest req, CallSummary* call) {
  validate_request(desc.kind, req);
  switch (desc.seed_policy) {
    case SeedPolicy::caller: break;
    case SeedPolicy::fixed: req.seed = desc.fixed_seed; break;
    case SeedPolicy::random: req.seed = std::random_device{}() | (std::uint64_t{std::random_device{}()} << 32); break;
  }
  auto& backend = generation_for(desc);
  const std::string stage = req.stage;
  return traced("generate", desc.kind, desc.model_id, stage, request_digest(desc.kind, req), call, [&] {
    Image out = backend.generate(req);
    require(out.width == req.width && out.height == req.height, ErrorCode::backend_error,
            "generate: backend returned " + std::to_string(out.width) + "x" + std::to_string(out.height) +
                ", requested " + std::to_string(req.width) + "x" + std::to_string(req.height));
    out = to_rgb(out);
    auto d = image_digest(out);
    return std::pair{std::move(out), d};
  });
}

namespace {

void check_embedding(const EmbeddingVector& v) {
  require(!v.values.empty(), ErrorCode::backend_error, "embed: backend returned an empty vector");
  double n2 = 0;
  for (double x : v.values) {
    require(std::isfinite(x), ErrorCode::backend_error, "embed: non-finite entry");
    n2 += x * x;
  }
  require(std::abs(std::sqrt(n2) - 1.0) <= 1e-6, ErrorCode::backend_error, "embed: vector is not unit-normalized");
}

}  // namespace

EmbeddingVector Backends::embed_image(const Image& image, const std::string& stage, CallSummary* call) {
  require(!image.empty(), ErrorCode::invalid_argument, "embed: empty image");
  const auto& d = descriptor(BackendKind::embed);
  {
    std::lock_guard lock(mu_);
    if (!handles_.embed) handles_.embed = make_embedding_backend(d);
  }
  const auto digest = json_digest({{"modality", "image"}, {"image", image_digest(image)}});
  return traced("embed.image", BackendKind::embed, d.model_id, stage, digest, call, [&] {
    auto v = handles_.embed->embed_image(image);
    check_embedding(v);
    auto dg = v.digest();
    return std::pair{std::move(v), dg};
  });
}

EmbeddingVector Backends::embed_text(const std::string& text, const std::string& stage, CallSummary* call) {
  require(!text.empty(), ErrorCode::invalid_argument, "embed: empty text");
  const auto& d = descriptor(BackendKind::embed);
  {
    std::lock_guard lock(mu_);
    if (!handles_.embed) handles_.embed = make_embedding_backend(d);
  }
  const auto digest = json_digest({{"modality", "text"}, {"text", text}});
  return traced("embed.text", BackendKind::embed, d.model_id, stage, digest, call, [&] {
    auto v = handles_.embed->embed_text(text);
    check_embedding(v);
    auto dg = v.digest();
    return std::pair{std::move(v), dg};
  });
}

EmbeddingVector Backends::embed_multimodal(const Image& image, const std::string& text, const std::string& stage,
                                           CallSummary* call) {
  require(!image.empty() && !text.empty(), ErrorCode::invalid_argument, "embed: multimodal input needs image and text");
  const auto& d = descriptor(BackendKind::embed);
  {
    std::lock_guard lock(mu_);
    if (!handles_.embed) handles_.embed = make_embedding_backend(d);
  }
  const auto digest = json_digest({{"modality", "multimodal"}, {"image", image_digest(image)}, {"text", text}});
  return traced("embed.multimodal", BackendKind::embed, d.model_id, stage, digest, call, [&] {
    auto v = handles_.embed->embed_multimodal(image, text);
    check_embedding(v);
    auto dg = v.digest();
    return std::pair{std::move(v), dg};
  });
}

double Backends::itc(const Image& image, const std::string& text, const std::string& stage, CallSummary* call) {
  require(!image.empty() && !text.empty(), ErrorCode::invalid_argument, "itc: needs image and text");
  const auto& d = descriptor(BackendKind::embed);
  {
    std::lock_guard lock(mu_);
    if (!handles_.embed) handles_.embed = make_embedding_backend(d);
  }
  const auto digest = json_digest({{"modality", "itc"}, {"image", image_digest(image)}, {"text", text}});
  return traced("itc", BackendKind::embed, d.model_id, stage, digest, call, [&] {
    const double s = handles_.embed->itc(image, text);
    require(std::isfinite(s), ErrorCode::backend_error, "itc: non-finite score");
    return std::pair{s, sha256_hex(nlohmann::json(s).dump())};
  });
}

SegmentationResult Backends::segment_foreground(const Image& image, const std::string& stage, CallSummary* call) {
  require(!image.empty(), ErrorCode::invalid_argument, "segment: empty image");
  const auto& d = descriptor(BackendKind::segment);
  {
    std::lock_guard lock(mu_);
    if (!handles_.segment) handles_.segment = make_segmentation_backend(d);
  }
  return traced("segment", BackendKind::segment, d.model_id, stage, image_digest(image), call, [&] {
    auto r = handles_.segment->segment_foreground(image);
    require(r.mask.width == image.width && r.mask.height == image.height && r.mask.channels == 1,
            ErrorCode::backend_error, "segment: mask resolution differs from input");
    for (auto v : r.mask.pixels) require(v <= 1, ErrorCode::backend_error, "segment: mask values must be 0 or 1");
    auto dg = image_digest(r.mask);
    return std::pair{std::move(r), dg};
  });
}

// ---------------------------------------------------------------------------

std::map<BackendKind, BackendDescriptor> stub_descriptors() {
  std::map<BackendKind, BackendDescriptor> out;
  for (auto k : kAllKinds) {
    BackendDescriptor d;
    d.kind = k;
    d.endpoint = "stub";
    d.model_id = "stub-" + std::string(to_string(k));
    out.emplace(k, d);
  }
  return out;
}

void apply_env_overrides(std::map<BackendKind, BackendDescriptor>& descriptors) {
  std::optional<double> timeout;
  if (const char* t = std::getenv("VQADIFF_BACKEND_TIMEOUT_S"); t && *t) {
    char* end = nullptr;
    const double v = std::strtod(t, &end);
    require(end && *end == '\0' && v > 0, ErrorCode::config, "VQADIFF_BACKEND_TIMEOUT_S must be a positive number");
    timeout = v;
  }
  for (auto k : kAllKinds) {
    std::string name = "VQADIFF_BACKEND_";
    for (char c : to_string(k)) name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    name += "_URL";
    const char* url = std::getenv(name.c_str());
    auto it = descriptors.find(k);
    if (url && *url) {
      if (it == descriptors.end()) {
        BackendDescriptor d;
        d.kind = k;
        d.model_id = std::string(to_string(k));
        it = descriptors.emplace(k, d).first;
      }
      it->second.endpoint = url;
    }
    if (timeout && it != descriptors.end()) it->second.timeout_s = *timeout;
  }
}

std::shared_ptr<GenerationBackend> make_generation_backend(const BackendDescriptor& desc) {
  if (desc.is_stub()) return std::make_shared<StubGeneration>(desc.kind, desc.model_id);
  return std::make_shared<HttpGeneration>(desc);
}

std::shared_ptr<VqaBackend> make_vqa_backend(const BackendDescriptor& desc) {
  if (desc.is_stub()) return std::make_shared<StubVqa>();
  return std::make_shared<HttpVqa>(desc);
}

std::shared_ptr<EmbeddingBackend> make_embedding_backend(const BackendDescriptor& desc) {
  if (desc.is_stub()) return std::make_shared<StubEmbedding>(desc.model_id);
  return std::make_shared<HttpEmbedding>(desc);
}

std::shared_ptr<SegmentationBackend> make_segmentation_backend(const BackendDescriptor& desc) {
  if (desc.is_stub()) return std::make_shared<StubSegmentation>();
  return std::make_shared<HttpSegmentation>(desc);
}

}  // namespace vqadiff::backends
