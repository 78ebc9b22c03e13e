#include "vqadiff/http_backends.hpp"

#include <chrono>
#include <thread>

#include "httplib.h"
#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"

namespace vqadiff::backends {

namespace {

struct SlotGuard {
  std::counting_semaphore<64>& sem;
  explicit SlotGuard(std::counting_semaphore<64>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
};

}  // namespace

HttpTransport::HttpTransport(BackendDescriptor desc) : desc_(std::move(desc)) {
  desc_.validate();
  require(!desc_.is_stub(), ErrorCode::config, "HTTP transport needs a URL endpoint");
  // Split "http://host:port/base/path" into client origin and path prefix.
  const auto scheme_end = desc_.endpoint.find("://");
  const auto path_start = desc_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = desc_.endpoint.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : desc_.endpoint.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  slots_ = std::make_unique<std::counting_semaphore<64>>(desc_.max_in_flight);
}

nlohmann::json HttpTransport::post(const std::string& path, const nlohmann::json& body,
                                   const std::string& idempotency_key) {
  return send("POST", path, &body, idempotency_key);
}

nlohmann::json HttpTransport::get(const std::string& path) {
  // GETs are idempotent by definition.
  return send("GET", path, nullptr, "get:" + path);
}

nlohmann::json HttpTransport::send(const std::string& method, const std::string& path, const nlohmann::json* body,
                                   const std::string& idempotency_key) {
  const std::string url_path = base_path_ + path;
  const std::string payload = body ? body->dump() : std::string();
  const auto timeout = std::chrono::duration<double>(desc_.timeout_s);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  const int max_attempts = idempotency_key.empty() ? 1 : desc_.max_retries + 1;

  std::string last_error;
  int last_status = 0;
  bool last_was_timeout = false;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(std::chrono::milliseconds(desc_.backoff_ms * (1LL << (attempt - 2))));
    }
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                               static_cast<long>(timeout_us.count() % 1000000));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                         static_cast<long>(timeout_us.count() % 1000000));
    cli.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                          static_cast<long>(timeout_us.count() % 1000000));
    httplib::Headers headers;
    if (!idempotency_key.empty()) headers.emplace("Idempotency-Key", idempotency_key);

    const auto t0 = std::chrono::steady_clock::now();
    httplib::Result res;
    {
      SlotGuard slot(*slots_);
      res = method == "GET" ? cli.Get(url_path, headers) : cli.Post(url_path, headers, payload, "application/json");
    }
    const auto elapsed = std::chrono::steady_clock::now() - t0;

    if (!res) {
      const auto err = res.error();
      last_was_timeout = err == httplib::Error::ConnectionTimeout ||
                         ((err == httplib::Error::Read || err == httplib::Error::Write) && elapsed >= 0.9 * timeout);
      last_error = httplib::to_string(err);
      last_status = 0;
      continue;
    }
    if (res->status >= 500) {
      last_status = res->status;
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      last_was_timeout = false;
      continue;
    }
    if (res->status >= 400) {
      throw BackendError(desc_.endpoint + url_path + " rejected request: HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200),
                         res->status, attempt);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(desc_.endpoint + url_path + " returned malformed JSON: " + e.what(), res->status, attempt);
    }
  }

  const std::string where = desc_.endpoint + url_path;
  if (last_status >= 500) {
    throw BackendError(where + " failed after " + std::to_string(max_attempts) + " attempt(s): " + last_error,
                       last_status, max_attempts);
  }
  if (last_was_timeout) fail(ErrorCode::timeout, where + " timed out after " + std::to_string(max_attempts) + " attempt(s)");
  fail(ErrorCode::backend_unavailable, where + " unreachable after " + std::to_string(max_attempts) +
                                           " attempt(s): " + last_error);
}

std::string encode_image_field(const Image& img) { return base64_encode(encode_png(img)); }

Image decode_image_field(const nlohmann::json& field) {
  require(field.is_string(), ErrorCode::backend_error, "image field must be a base64 string");
  return decode_png(base64_decode(field.get<std::string>()));
}

nlohmann::json generation_request_to_json(const GenerationRequest& req, const std::string& model_id) {
  nlohmann::json j = {{"prompt", req.prompt},     {"seed", req.seed},   {"steps", req.steps},
                      {"guidance", req.guidance}, {"width", req.width}, {"height", req.height},
                      {"model_id", model_id}};
  if (req.init_image) j["init_image"] = encode_image_field(*req.init_image);
  if (req.condition_image) j["condition_image"] = encode_image_field(*req.condition_image);
  if (req.subject_embedding) j["subject_embedding"] = *req.subject_embedding;
  return j;
}

GenerationRequest generation_request_from_json(const nlohmann::json& j) {
  GenerationRequest r;
  r.prompt = j.value("prompt", "");
  r.seed = j.value("seed", std::uint64_t{0});
  r.steps = j.value("steps", kDefaultSteps);
  r.guidance = j.value("guidance", kDefaultGuidance);
  r.width = j.value("width", 256);
  r.height = j.value("height", 256);
  if (j.contains("init_image")) r.init_image = decode_image_field(j.at("init_image"));
  if (j.contains("condition_image")) r.condition_image = decode_image_field(j.at("condition_image"));
  if (j.contains("subject_embedding")) r.subject_embedding = j.at("subject_embedding").get<std::vector<double>>();
  return r;
}

std::string HttpVqa::answer(const Image& image, const std::string& question) {
  const nlohmann::json body = {{"image", encode_image_field(image)}, {"question", question}, {"mode", "answer"}};
  const auto key = json_digest({{"image", image_digest(image)}, {"question", question}, {"mode", "answer"}});
  const auto r = http_.post("/vqa", body, key);
  require(r.contains("answer") && r["answer"].is_string(), ErrorCode::backend_error, "/vqa: missing answer");
  return r["answer"].get<std::string>();
}

double HttpVqa::yes_probability(const Image& image, const std::string& question) {
  const nlohmann::json body = {{"image", encode_image_field(image)}, {"question", question}, {"mode", "yes_probability"}};
  const auto key = json_digest({{"image", image_digest(image)}, {"question", question}, {"mode", "yes_probability"}});
  const auto r = http_.post("/vqa", body, key);
  require(r.contains("yes_probability") && r["yes_probability"].is_number(), ErrorCode::backend_error,
          "/vqa: missing yes_probability");
  return r["yes_probability"].get<double>();
}

Image HttpGeneration::generate(const GenerationRequest& req) {
  const auto& d = http_.descriptor();
  validate_request(d.kind, req);
  const auto r = http_.post("/generate/" + std::string(to_string(d.kind)), generation_request_to_json(req, d.model_id),
                            request_digest(d.kind, req));
  require(r.contains("image"), ErrorCode::backend_error, "/generate: missing image");
  return decode_image_field(r.at("image"));
}

EmbeddingVector HttpEmbedding::call(Modality modality, const Image* image, const std::string* text) {
  nlohmann::json body = {{"modality", to_string(modality)}, {"model_id", http_.descriptor().model_id}};
  nlohmann::json key = {{"modality", to_string(modality)}};
  if (image) {
    body["image"] = encode_image_field(*image);
    key["image"] = image_digest(*image);
  }
  if (text) {
    body["text"] = *text;
    key["text"] = *text;
  }
  const auto r = http_.post("/embed", body, json_digest(key));
  require(r.contains("values") && r["values"].is_array(), ErrorCode::backend_error, "/embed: missing values");
  return {r["values"].get<std::vector<double>>(), modality};
}

EmbeddingVector HttpEmbedding::embed_image(const Image& image) { return call(Modality::image, &image, nullptr); }

EmbeddingVector HttpEmbedding::embed_text(const std::string& text) { return call(Modality::text, nullptr, &text); }

EmbeddingVector HttpEmbedding::embed_multimodal(const Image& image, const std::string& text) {
  return call(Modality::multimodal, &image, &text);
}

double HttpEmbedding::itc(const Image& image, const std::string& text) {
  const nlohmann::json body = {{"modality", "itc"}, {"model_id", http_.descriptor().model_id},
                               {"image", encode_image_field(image)}, {"text", text}};
  const auto key = json_digest({{"modality", "itc"}, {"image", image_digest(image)}, {"text", text}});
  const auto r = http_.post("/embed", body, key);
  require(r.contains("score") && r["score"].is_number(), ErrorCode::backend_error, "/embed: missing itc score");
  return r["score"].get<double>();
}

SegmentationResult HttpSegmentation::segment_foreground(const Image& image) {
  const auto r = http_.post("/segment", {{"image", encode_image_field(image)}}, image_digest(image));
  require(r.contains("mask"), ErrorCode::backend_error, "/segment: missing mask");
  SegmentationResult out;
  out.mask = to_gray(decode_image_field(r.at("mask")));
  // Masks may arrive as 0/255 PNGs; normalize to 0/1.
  for (auto& v : out.mask.pixels) v = v ? 1 : 0;
  out.empty = r.value("empty", false);
  return out;
}

}  // namespace vqadiff::backends
