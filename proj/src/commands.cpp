#include "vqadiff/commands.hpp"

#include <fstream>
#include <iostream>

#include "vqadiff/appearance_gen.hpp"
#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"

namespace vqadiff {

namespace fs = std::filesystem;
using backends::BackendKind;

namespace {

nlohmann::json read_json_file(const fs::path& path, ErrorCode code) {
  std::ifstream in(path);
  if (!in) fail(code, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(code, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
}

std::string desc_digest(const PipelineConfig& cfg, BackendKind k) { return cfg.backends.at(k).digest(); }

// Runs a cached stage: on miss, fn fills the prepared directory and the entry
// is committed; a failing fn leaves no stage directory behind.
template <typename Fn>
bool run_stage(const Cache& cache, const std::string& stage, const std::string& key, const nlohmann::json& inputs,
               Fn&& fn) {
  if (cache.lookup(stage, key)) return true;
  const auto dir = cache.prepare(stage, key);
  try {
    fn(dir);
  } catch (...) {
    cache.discard(stage, key);
    throw;
  }
  cache.commit(stage, key, inputs);
  return false;
}

void copy_dir(const fs::path& from, const fs::path& to) {
  std::error_code ec;
  fs::create_directories(to, ec);
  fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing, ec);
  if (ec) fail(ErrorCode::export_failed, "cannot copy bundle to " + to.string() + ": " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<IndexEntry> load_index(const fs::path& path) {
  const auto j = read_json_file(path, ErrorCode::validation);
  require(j.is_array(), ErrorCode::validation, "index " + path.string() + " must be a JSON list");
  const auto base = fs::absolute(path).parent_path();
  std::vector<IndexEntry> out;
  try {
    for (const auto& e : j) {
      IndexEntry ie;
      ie.id = e.at("id").get<std::string>();
      require(!ie.id.empty() && ie.id.find('/') == std::string::npos, ErrorCode::validation,
              "index: invalid instance id '" + ie.id + "'");
      ie.model_path = e.at("model_path").get<std::string>();
      if (ie.model_path.is_relative()) ie.model_path = base / ie.model_path;
      if (e.contains("bbox_min") && e.contains("bbox_max")) {
        const auto lo = e.at("bbox_min").get<std::vector<double>>();
        const auto hi = e.at("bbox_max").get<std::vector<double>>();
        require(lo.size() == 3 && hi.size() == 3, ErrorCode::validation, "index: bbox needs 3 components");
        ie.bbox_min = geometry::Vec3(lo[0], lo[1], lo[2]);
        ie.bbox_max = geometry::Vec3(hi[0], hi[1], hi[2]);
      }
      out.push_back(std::move(ie));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, "index " + path.string() + ": " + e.what());
  }
  return out;
}

BuildDatasetResult cmd_build_dataset(const PipelineConfig& cfg, const BuildDatasetOptions& opts,
                                     backends::Backends& be) {
  const auto index = load_index(opts.index);
  require(!index.empty(), ErrorCode::validation, "index lists no instances");
  const auto ring = cfg.ring.ring();
  BuildDatasetResult res;

  for (const auto& e : index) {
    geometry::Vec3 lo, hi;
    if (e.bbox_min) {
      lo = *e.bbox_min;
      hi = *e.bbox_max;
    } else {
      std::tie(lo, hi) = geometry::obj_bounds(e.model_path);
    }
    geometry::build_manifest(e.id, e.model_path.string(), lo, hi, ring, opts.render_root, cfg.ring.image_size,
                             cfg.ring.fov_deg);
    res.manifests.push_back(opts.render_root / e.id / "manifest.json");
  }

  // Renders come from an external tool; report every missing file before asking the VQA model anything.
  std::string gaps;
  for (const auto& e : index) {
    std::vector<int> missing;
    for (int v = 0; v < cfg.ring.n_views; ++v) {
      if (!fs::exists(opts.render_root / e.id / geometry::view_file_name(v))) missing.push_back(v);
    }
    if (missing.empty()) continue;
    gaps += "\n  " + e.id + ": missing views";
    for (int v : missing) gaps += " " + std::to_string(v);
  }
  if (!gaps.empty()) {
    fail(ErrorCode::incomplete_instance,
         "render manifests written under " + opts.render_root.string() + "; renders incomplete:" + gaps);
  }

  res.prompts_written = structure::ensure_prompts(be, opts.render_root, cfg.ring.n_views);

  nlohmann::json inputs = {{"layout", cfg.layout.to_json()}, {"instances", nlohmann::json::object()}};
  for (const auto& id : structure::list_instances(opts.render_root)) {
    nlohmann::json files = nlohmann::json::array();
    for (int v = 0; v < cfg.ring.n_views; ++v) files.push_back(file_digest(opts.render_root / id / geometry::view_file_name(v)));
    inputs["instances"][id] = {{"views", files}, {"prompt", file_digest(opts.render_root / id / "prompt.json")}};
  }
  const Cache cache(cfg.cache_dir);
  const auto key = json_digest(inputs);
  res.cached = run_stage(cache, "dataset", key, inputs, [&](const fs::path& dir) {
    structure::build_training_pairs(opts.render_root, cfg.layout, dir);
  });
  res.dataset_dir = cache.dir("dataset", key);
  res.pairs = structure::load_manifests(res.dataset_dir).pair_count();
  return res;
}

TrainResult cmd_train_experts(const PipelineConfig& cfg, const fs::path& dataset_dir,
                              structure::TrainingBackend* trainer) {
  const auto manifests = structure::load_manifests(dataset_dir);
  require(manifests.layout == cfg.layout, ErrorCode::validation,
          "dataset layout differs from configured layout; rebuild the dataset");
  nlohmann::json inputs = {{"training", cfg.training.to_json()},
                           {"training_endpoint", cfg.training_endpoint},
                           {"anchor_backend", desc_digest(cfg, BackendKind::text2image)},
                           {"neighbor_backend", desc_digest(cfg, BackendKind::image2image)},
                           {"datasets", nlohmann::json::array()}};
  for (const auto& d : manifests.datasets) inputs["datasets"].push_back({{"expert_id", d.expert_id}, {"digest", d.digest}});

  const Cache cache(cfg.cache_dir);
  const auto key = json_digest(inputs);
  TrainResult res;
  res.jobs = manifests.datasets.size();
  res.cached = run_stage(cache, "experts", key, inputs, [&](const fs::path& dir) {
    std::unique_ptr<structure::TrainingBackend> owned;
    if (!trainer) {
      owned = structure::make_training_backend(cfg.training_endpoint, cfg.backends.at(BackendKind::text2image).timeout_s);
      trainer = owned.get();
    }
    structure::TrainOptions topts;
    topts.max_in_flight = static_cast<std::size_t>(cfg.max_in_flight);
    topts.poll_interval_ms = cfg.training_endpoint == "stub" ? 0 : 5000;
    structure::train_experts(manifests, cfg.training, *trainer, cfg.backends, topts).save(dir / "experts.json");
  });
  res.experts_path = cache.dir("experts", key) / "experts.json";
  return res;
}

// ---------------------------------------------------------------------------

GenerateResult cmd_generate(const PipelineConfig& cfg, const GenerateOptions& opts, backends::Backends& be) {
  require(fs::is_regular_file(opts.image), ErrorCode::validation, "input image not found: " + opts.image.string());
  Image input;
  try {
    input = to_rgb(read_png(opts.image));
  } catch (const Error& e) {
    fail(ErrorCode::validation, "cannot decode input image " + opts.image.string() + ": " + e.what());
  }
  const std::uint64_t seed = opts.seed.value_or(cfg.seed);
  const auto experts = cfg.experts_path ? structure::ExpertSet::load(*cfg.experts_path)
                                        : structure::default_experts(cfg.backends, cfg.layout, cfg.training);
  require(experts.layout == cfg.layout, ErrorCode::config, "experts layout differs from configured layout");
  const Cache cache(cfg.cache_dir);
  GenerateResult res;

  // --- prompt
  const bool uses_vqa = !opts.prompt_override;
  nlohmann::json prompt_in = {{"image", image_digest(input)},
                              {"override", opts.prompt_override.value_or("")},
                              {"suffix", opts.prompt_suffix.value_or("")},
                              {"transform", opts.reference_transform.value_or("")}};
  if (opts.reference_transform) {
    prompt_in["transform_backend"] = desc_digest(cfg, BackendKind::image2image);
    prompt_in["seed"] = seed;
  }
  if (uses_vqa) {
    prompt_in["vqa_backend"] = desc_digest(cfg, BackendKind::vqa);
    prompt_in["vqa_fixtures"] = cfg.provenance_json()["vqa_fixtures_digest"];
    if (cfg.refine.enabled) {
      prompt_in["refine"] = cfg.provenance_json()["refine"];
      prompt_in["embed_backend"] = desc_digest(cfg, BackendKind::embed);
      prompt_in["scorer_backend"] = desc_digest(cfg, BackendKind::text2image);
      prompt_in["seed"] = seed;
    }
  }
  const auto prompt_key = json_digest(prompt_in);
  res.cache_hits["prompt"] = run_stage(cache, "prompt", prompt_key, prompt_in, [&](const fs::path& dir) {
    Image reference = input;
    if (opts.reference_transform) {
      backends::GenerationRequest req;
      req.prompt = *opts.reference_transform;
      req.init_image = input;
      req.seed = seed;
      req.width = input.width;
      req.height = input.height;
      req.stage = "prompt.transform";
      try {
        reference = be.generate(BackendKind::image2image, std::move(req));
      } catch (const Error& e) {
        throw StageError("prompt.transform", e);
      }
      write_png(reference, dir / "reference.png");
    }
    vqa::VehiclePrompt p;
    try {
      if (opts.prompt_override) {
        p.answer = *opts.prompt_override;
        require(!p.answer.empty(), ErrorCode::validation, "--prompt-override is empty");
        p.refinement_trace.push_back({"", p.answer, 0.0, 0});
      } else if (cfg.refine.enabled) {
        vqa::RefineOptions ro;
        ro.scorer = cfg.refine.scorer;
        if (!cfg.refine.reference_caption.empty()) ro.reference_caption = cfg.refine.reference_caption;
        ro.max_iters = cfg.refine.max_iters;
        ro.epsilon = cfg.refine.epsilon;
        ro.seed = seed;
        ro.max_in_flight = static_cast<std::size_t>(cfg.max_in_flight);
        p = vqa::refine_question(be, reference, cfg.refine.bank(), ro);
      } else {
        p = vqa::extract_description(be, reference);
      }
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError("prompt", e);
    }
    if (opts.prompt_suffix && !opts.prompt_suffix->empty()) {
      p.answer += " " + *opts.prompt_suffix;
      p.warnings.push_back("prompt-suffix appended");
    }
    write_json_file(dir / "prompt.json", p.to_json());
  });
  const auto prompt_dir = cache.dir("prompt", prompt_key);
  const auto prompt = vqa::VehiclePrompt::from_json(read_json_file(prompt_dir / "prompt.json", ErrorCode::validation));
  const Image reference = fs::exists(prompt_dir / "reference.png") ? to_rgb(read_png(prompt_dir / "reference.png")) : input;

  // --- structure
  const auto ring = cfg.ring.ring();
  const nlohmann::json structure_in = {{"answer", prompt.answer},
                                       {"seed", seed},
                                       {"experts", experts.digest()},
                                       {"ring", cfg.ring.to_json()},
                                       {"consistency_threshold", cfg.consistency_threshold},
                                       {"embed_backend", desc_digest(cfg, BackendKind::embed)}};
  const auto structure_key = json_digest(structure_in);
  res.cache_hits["structure"] = run_stage(cache, "structure", structure_key, structure_in, [&](const fs::path& dir) {
    structure::StructureOptions so;
    so.consistency_threshold = cfg.consistency_threshold;
    so.max_in_flight = static_cast<std::size_t>(cfg.max_in_flight);
    const auto sv = structure::generate_structures(be, prompt, experts, seed, ring, so);
    for (std::size_t i = 0; i < sv.views.size(); ++i) write_png(sv.views[i], dir / geometry::view_file_name(static_cast<int>(i)));
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& c : sv.calls) calls.push_back(c.to_json());
    write_json_file(dir / "structure.json", {{"anchor_consistency", sv.anchor_consistency},
                                             {"warnings", sv.warnings},
                                             {"calls", calls},
                                             {"seeds", sv.seeds}});
  });
  structure::StructureViews sv;
  {
    const auto dir = cache.dir("structure", structure_key);
    const auto meta = read_json_file(dir / "structure.json", ErrorCode::validation);
    sv.ring = ring;
    sv.prompt = prompt;
    sv.anchor_consistency = meta.at("anchor_consistency").get<std::vector<double>>();
    sv.warnings = meta.at("warnings").get<std::vector<std::string>>();
    sv.seeds = meta.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& c : meta.at("calls")) sv.calls.push_back(backends::CallSummary::from_json(c));
    for (int i = 0; i < ring.n_views; ++i) sv.views.push_back(to_rgb(read_png(dir / geometry::view_file_name(i))));
  }

  // --- appearance (subject embedding, per-view edge-to-image, export)
  const nlohmann::json context = {{"config", cfg.provenance_json()},
                                  {"experts", experts.to_json()},
                                  {"input_image_digest", image_digest(input)},
                                  {"reference_image_digest", image_digest(reference)},
                                  {"prompt_key", prompt_key},
                                  {"structure_key", structure_key}};
  const nlohmann::json appearance_in = {{"structure_key", structure_key},
                                        {"reference", image_digest(reference)},
                                        {"answer", prompt.answer},
                                        {"seed", seed},
                                        {"canny", cfg.canny.to_json()},
                                        {"segment_backend", desc_digest(cfg, BackendKind::segment)},
                                        {"embed_backend", desc_digest(cfg, BackendKind::embed)},
                                        {"edge_backend", desc_digest(cfg, BackendKind::edge2image)},
                                        {"context", json_digest(context)}};
  const auto appearance_key = json_digest(appearance_in);
  res.cache_hits["appearance"] = run_stage(cache, "appearance", appearance_key, appearance_in, [&](const fs::path& dir) {
    vqa::SubjectEmbedding subject;
    try {
      subject = vqa::subject_embedding(be, reference, prompt);
    } catch (const Error& e) {
      throw StageError("subject", e);
    }
    appearance::AppearanceOptions ao;
    ao.canny = cfg.canny;
    ao.max_in_flight = static_cast<std::size_t>(cfg.max_in_flight);
    auto bundle = appearance::render_appearance(be, sv, subject.vector, prompt, seed, ao);
    bundle.subject_calls = subject.calls;
    if (subject.degraded_mask) bundle.warnings.push_back("degraded-mask: segmentation found no foreground");
    bundle.context = context;
    appearance::export_bundle(bundle, dir);
  });
  res.bundle_dir = cache.dir("appearance", appearance_key);
  res.warnings = read_json_file(res.bundle_dir / "provenance.json", ErrorCode::validation)
                     .value("warnings", std::vector<std::string>{});
  if (opts.out_dir) {
    copy_dir(res.bundle_dir, *opts.out_dir);
    res.bundle_dir = *opts.out_dir;
  }
  return res;
}

// ---------------------------------------------------------------------------

EvaluateResult cmd_evaluate(const PipelineConfig& cfg, const EvaluateOptions& opts, backends::Backends& be) {
  const auto bundle = appearance::load_bundle(opts.bundle_dir);
  require(fs::is_regular_file(opts.reference), ErrorCode::validation, "reference image not found: " + opts.reference.string());
  Image reference;
  try {
    reference = to_rgb(read_png(opts.reference));
  } catch (const Error& e) {
    fail(ErrorCode::validation, "cannot decode reference image " + opts.reference.string() + ": " + e.what());
  }
  const std::string prompt_text = opts.prompt_text.value_or(bundle.prompt.answer);
  require(!prompt_text.empty(), ErrorCode::validation, "no prompt text for evaluation");

  eval::EvalOptions eo;
  eo.method_label = cfg.eval.method_label;
  eo.vqa_template = cfg.eval.vqa_template;
  eo.fixture_table = cfg.eval.fixture_table;
  eo.fixture_method = cfg.eval.fixture_method;
  nlohmann::json inputs = {{"bundle", directory_digest(opts.bundle_dir)},
                           {"reference", image_digest(reference)},
                           {"prompt", prompt_text},
                           {"eval", cfg.provenance_json()["eval"]},
                           {"embed_backend", desc_digest(cfg, BackendKind::embed)},
                           {"vqa_backend", desc_digest(cfg, BackendKind::vqa)},
                           {"vqa_fixtures", cfg.provenance_json()["vqa_fixtures_digest"]}};
  if (cfg.fixtures_path) {
    eo.fixtures = eval::Fixtures::load(*cfg.fixtures_path);
    inputs["fixtures"] = file_digest(*cfg.fixtures_path);
  }
  const Cache cache(cfg.cache_dir);
  const auto key = json_digest(inputs);
  EvaluateResult res;
  res.cached = run_stage(cache, "eval", key, inputs, [&](const fs::path& dir) {
    auto report = eval::evaluate_bundle(be, bundle, reference, prompt_text, eo);
    write_json_file(dir / "report.json", report.to_json());
  });
  res.report_path = cache.dir("eval", key) / "report.json";
  res.report = eval::EvalReport::from_json(read_json_file(res.report_path, ErrorCode::validation));
  // One CSV row per evaluation actually performed.
  if (!res.cached) {
    const auto name = opts.bundle_dir.filename().empty() ? opts.bundle_dir.parent_path().filename() : opts.bundle_dir.filename();
    eval::append_csv(cfg.csv_path(), name.string(), res.report);
  }
  return res;
}

AuditReport cmd_audit_cache(const PipelineConfig& cfg) { return Cache(cfg.cache_dir).audit(); }

}  // namespace vqadiff
