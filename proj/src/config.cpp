#include "vqadiff/config.hpp"

#include <fstream>

#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/stub_backends.hpp"

namespace vqadiff {

namespace fs = std::filesystem;
using backends::BackendKind;

namespace {

std::optional<fs::path> opt_path(const nlohmann::json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  fs::path p = j.at(key).get<std::string>();
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

nlohmann::json path_json(const std::optional<fs::path>& p) {
  return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

std::string file_content_digest(const std::optional<fs::path>& p) {
  if (!p || !fs::exists(*p)) return "";
  return file_digest(*p);
}

}  // namespace

geometry::CameraRing RingConfig::ring() const {
  return geometry::camera_ring(n_views, elevation_deg, radius, start_azimuth_deg);
}

nlohmann::json RingConfig::to_json() const {
  return {{"n_views", n_views}, {"elevation_deg", elevation_deg}, {"radius", radius},
          {"start_azimuth_deg", start_azimuth_deg}, {"image_size", image_size}, {"fov_deg", fov_deg}};
}

vqa::QuestionTemplateBank RefineConfig::bank() const {
  return template_bank ? vqa::QuestionTemplateBank::load(*template_bank) : vqa::QuestionTemplateBank::defaults();
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, "config file " + path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    require(j.is_object(), ErrorCode::config, "config must be a JSON object");
    if (j.contains("backends")) {
      for (const auto& [name, body] : j.at("backends").items()) {
        const auto kind = backends::kind_from_string(name);
        c.backends[kind] = backends::BackendDescriptor::from_json(body, kind);
      }
    }
    if (j.contains("ring")) {
      const auto& r = j.at("ring");
      c.ring.n_views = r.value("n_views", c.ring.n_views);
      c.ring.elevation_deg = r.value("elevation_deg", c.ring.elevation_deg);
      c.ring.radius = r.value("radius", c.ring.radius);
      c.ring.start_azimuth_deg = r.value("start_azimuth_deg", c.ring.start_azimuth_deg);
      c.ring.image_size = r.value("image_size", c.ring.image_size);
      c.ring.fov_deg = r.value("fov_deg", c.ring.fov_deg);
    }
    if (j.contains("layout")) c.layout = structure::Layout::from_json(j.at("layout"));
    if (j.contains("canny")) c.canny = appearance::CannyParams::from_json(j.at("canny"));
    if (j.contains("training")) c.training = structure::TrainingConfig::from_json(j.at("training"));
    c.training_endpoint = j.value("training_endpoint", c.training_endpoint);
    c.seed = j.value("seed", c.seed);
    c.consistency_threshold = j.value("consistency_threshold", c.consistency_threshold);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (j.contains("refine")) {
      const auto& r = j.at("refine");
      c.refine.enabled = r.value("enabled", c.refine.enabled);
      const auto scorer = r.value("scorer", std::string("img2img"));
      require(scorer == "img2img" || scorer == "txt2txt", ErrorCode::config,
              "refine.scorer must be img2img or txt2txt");
      c.refine.scorer = scorer == "txt2txt" ? vqa::ScoringMode::txt2txt : vqa::ScoringMode::img2img;
      c.refine.max_iters = r.value("max_iters", c.refine.max_iters);
      c.refine.epsilon = r.value("epsilon", c.refine.epsilon);
      c.refine.template_bank = opt_path(r, "template_bank", base_dir);
      c.refine.reference_caption = r.value("reference_caption", "");
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.method_label = e.value("method_label", c.eval.method_label);
      c.eval.vqa_template = e.value("vqa_template", c.eval.vqa_template);
      c.eval.fixture_table = e.value("fixture_table", c.eval.fixture_table);
      c.eval.fixture_method = e.value("fixture_method", c.eval.fixture_method);
      c.eval.csv_path = opt_path(e, "csv_path", base_dir);
    }
    if (auto p = opt_path(j, "cache_dir", base_dir)) c.cache_dir = *p;
    c.fixtures_path = opt_path(j, "fixtures_path", base_dir);
    c.experts_path = opt_path(j, "experts_path", base_dir);
    c.vqa_fixtures_path = opt_path(j, "vqa_fixtures_path", base_dir);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    fail(ErrorCode::config, std::string("config: ") + e.what());
  }
  backends::apply_env_overrides(c.backends);
  return c;
}

nlohmann::json PipelineConfig::to_json() const {
  auto j = provenance_json();
  j["cache_dir"] = cache_dir.string();
  j["fixtures_path"] = path_json(fixtures_path);
  j["experts_path"] = path_json(experts_path);
  j["vqa_fixtures_path"] = path_json(vqa_fixtures_path);
  j["refine"]["template_bank"] = path_json(refine.template_bank);
  j["eval"]["csv_path"] = path_json(eval.csv_path);
  return j;
}

nlohmann::json PipelineConfig::provenance_json() const {
  nlohmann::json be = nlohmann::json::object();
  for (const auto& [k, d] : backends) {
    auto dj = d.to_json();
    dj.erase("kind");
    be[std::string(backends::to_string(k))] = dj;
  }
  return {
      {"backends", be},
      {"ring", ring.to_json()},
      {"layout", layout.to_json()},
      {"canny", canny.to_json()},
      {"training", training.to_json()},
      {"training_endpoint", training_endpoint},
      {"seed", seed},
      {"consistency_threshold", consistency_threshold},
      {"max_in_flight", max_in_flight},
      {"refine",
       {{"enabled", refine.enabled},
        {"scorer", refine.scorer == vqa::ScoringMode::txt2txt ? "txt2txt" : "img2img"},
        {"max_iters", refine.max_iters},
        {"epsilon", refine.epsilon},
        {"reference_caption", refine.reference_caption},
        {"template_bank_digest", file_content_digest(refine.template_bank)}}},
      {"eval",
       {{"method_label", eval.method_label},
        {"vqa_template", eval.vqa_template},
        {"fixture_table", eval.fixture_table},
        {"fixture_method", eval.fixture_method}}},
      {"vqa_fixtures_digest", file_content_digest(vqa_fixtures_path)},
  };
}

void PipelineConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.emplace_back(e.what());
    }
  };
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  for (auto k : backends::kAllKinds) {
    if (!backends.count(k)) problems.push_back("backends: missing '" + std::string(backends::to_string(k)) + "'");
  }
  for (const auto& [k, d] : backends) check([&] { d.validate(); });
  check([&] { ring.ring(); });
  expect(ring.image_size > 0, "ring.image_size must be positive");
  expect(ring.fov_deg > 0 && ring.fov_deg < 180, "ring.fov_deg must be in (0, 180)");
  check([&] { layout.validate(); });
  expect(layout.n_views == ring.n_views, "layout.n_views (" + std::to_string(layout.n_views) +
                                             ") must equal ring.n_views (" + std::to_string(ring.n_views) + ")");
  check([&] { canny.validate(); });
  check([&] { training.validate(); });
  expect(!training_endpoint.empty(), "training_endpoint must be set");
  expect(consistency_threshold >= -1 && consistency_threshold <= 1, "consistency_threshold must be in [-1, 1]");
  expect(max_in_flight >= 1, "max_in_flight must be >= 1");
  expect(refine.max_iters >= 1, "refine.max_iters must be >= 1");
  expect(refine.epsilon >= 0, "refine.epsilon must be >= 0");
  if (refine.enabled && refine.scorer == vqa::ScoringMode::txt2txt) {
    expect(!refine.reference_caption.empty(), "refine.scorer txt2txt needs refine.reference_caption");
  }
  if (refine.template_bank) {
    expect(fs::is_regular_file(*refine.template_bank), "refine.template_bank not found: " + refine.template_bank->string());
    if (fs::is_regular_file(*refine.template_bank)) check([&] { refine.bank().validate(); });
  }
  expect(eval.vqa_template.find("{prompt}") != std::string::npos, "eval.vqa_template must contain {prompt}");
  if (fixtures_path) expect(fs::is_regular_file(*fixtures_path), "fixtures_path not found: " + fixtures_path->string());
  if (experts_path) expect(fs::is_regular_file(*experts_path), "experts_path not found: " + experts_path->string());
  if (vqa_fixtures_path) {
    expect(fs::is_regular_file(*vqa_fixtures_path), "vqa_fixtures_path not found: " + vqa_fixtures_path->string());
  }
  {
    std::error_code ec;
    fs::create_directories(cache_dir, ec);
    expect(!ec && fs::is_directory(cache_dir), "cache_dir not creatable: " + cache_dir.string());
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    fail(ErrorCode::config, msg);
  }
}

fs::path PipelineConfig::csv_path() const { return eval.csv_path ? *eval.csv_path : cache_dir / "aggregate.csv"; }

std::unique_ptr<backends::Backends> make_backends(const PipelineConfig& cfg, std::shared_ptr<backends::TraceLog> trace) {
  auto be = std::make_unique<backends::Backends>(cfg.backends, std::move(trace));
  const auto& vqa = cfg.backends.at(BackendKind::vqa);
  if (vqa.is_stub() && cfg.vqa_fixtures_path) {
    be->set_vqa(std::make_shared<backends::StubVqa>(backends::VqaFixtures::load(*cfg.vqa_fixtures_path)));
  }
  return be;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
      return 2;
    case ErrorCode::backend_unavailable:
    case ErrorCode::timeout:
    case ErrorCode::backend_error:
    case ErrorCode::empty_answer:
    case ErrorCode::training_failed:
    case ErrorCode::generation:
      return 3;
    default:
      return 4;
  }
}

}  // namespace vqadiff
