#include <iostream>

#include "CLI11.hpp"
#include "vqadiff/commands.hpp"
#include "vqadiff/error.hpp"

namespace vqadiff {

namespace fs = std::filesystem;

namespace {

// Each command's trace covers that invocation only, so an unchanged re-run
// leaves it empty.
std::shared_ptr<backends::TraceLog> fresh_trace(const PipelineConfig& cfg) {
  const auto path = cfg.cache_dir / "trace.jsonl";
  std::error_code ec;
  fs::remove(path, ec);
  return std::make_shared<backends::TraceLog>(path);
}

void print_deltas(std::ostream& out, const eval::EvalReport& r) {
  if (!r.fixture_delta) return;
  out << "fixture deltas (measured - published):";
  for (const auto& [k, v] : *r.fixture_delta) out << " " << k << "=" << v;
  out << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-image vehicle novel-view generation pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::string cache_override;
  app.add_option("-c,--config", config_path, "Pipeline config file (JSON)")->check(CLI::ExistingFile);
  app.add_option("--cache-dir", cache_override, "Override cache_dir from the config");

  auto* build = app.add_subcommand("build-dataset", "Write render manifests and build expert training pairs");
  std::string index_path, render_root;
  build->add_option("--index", index_path, "Instance index (JSON list of {id, model_path[, bbox_min, bbox_max]})")
      ->required();
  build->add_option("--render-root", render_root, "Directory holding <id>/view_XX.png renders")->required();

  auto* train = app.add_subcommand("train-experts", "Submit expert fine-tuning jobs for a built dataset");
  std::string dataset_dir;
  train->add_option("--dataset", dataset_dir, "Dataset directory printed by build-dataset")->required();

  auto* gen = app.add_subcommand("generate", "Generate a posed multi-view asset bundle from one image");
  std::string image_path, out_dir, prompt_override, prompt_suffix, transform;
  std::uint64_t seed = 0;
  gen->add_option("--image", image_path, "Input PNG image")->required();
  auto* seed_opt = gen->add_option("--seed", seed, "Asset seed (default: config seed)");
  auto* override_opt = gen->add_option("--prompt-override", prompt_override, "Use this description instead of asking the VQA model");
  auto* suffix_opt = gen->add_option("--prompt-suffix", prompt_suffix, "Words appended to the description, e.g. \"with a rear spoiler\"");
  auto* transform_opt = gen->add_option("--reference-transform", transform,
                                        "Image-to-image instruction applied to the input before description");
  auto* out_opt = gen->add_option("--out", out_dir, "Copy the bundle to this directory");

  auto* evaluate = app.add_subcommand("evaluate", "Score a bundle against a reference image");
  std::string bundle_dir, reference_path, prompt_text, fixtures, table, method;
  evaluate->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  evaluate->add_option("--reference", reference_path, "Reference PNG image")->required();
  auto* prompt_opt = evaluate->add_option("--prompt", prompt_text, "Prompt text (default: bundle description)");
  auto* fixtures_opt = evaluate->add_option("--fixtures", fixtures, "Published reference metrics file");
  auto* table_opt = evaluate->add_option("--table", table, "Fixture table, e.g. pascal3d");
  auto* method_opt = evaluate->add_option("--method", method, "Fixture row, e.g. Ours");

  auto* audit = app.add_subcommand("audit-cache", "Check that every cached file belongs to exactly one entry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig::from_json(nlohmann::json::object())
                                             : PipelineConfig::load(config_path);
    if (!cache_override.empty()) cfg.cache_dir = cache_override;
    if (*fixtures_opt) cfg.fixtures_path = fs::path(fixtures);
    if (*table_opt) cfg.eval.fixture_table = table;
    if (*method_opt) cfg.eval.fixture_method = method;
    cfg.validate();

    if (*audit) {
      const auto r = cmd_audit_cache(cfg);
      out << "entries " << r.entries << ", files " << r.files << "\n";
      for (const auto& f : r.orphans) out << "orphan " << f << "\n";
      for (const auto& f : r.missing) out << "missing " << f << "\n";
      for (const auto& f : r.shared) out << "shared " << f << "\n";
      out << (r.ok() ? "cache ok\n" : "cache audit failed\n");
      return r.ok() ? 0 : 4;
    }
    if (*train) {
      const auto r = cmd_train_experts(cfg, dataset_dir);
      out << (r.cached ? "cached " : "trained ") << r.jobs << " experts\n" << r.experts_path.string() << "\n";
      return 0;
    }

    auto trace = fresh_trace(cfg);
    auto be = make_backends(cfg, trace);
    if (*build) {
      const auto r = cmd_build_dataset(cfg, {index_path, render_root}, *be);
      out << r.manifests.size() << " render manifests\n";
      out << r.prompts_written << " prompts written\n";
      out << (r.cached ? "cached " : "built ") << r.pairs << " training pairs\n" << r.dataset_dir.string() << "\n";
      return 0;
    }
    if (*gen) {
      GenerateOptions go;
      go.image = image_path;
      if (*seed_opt) go.seed = seed;
      if (*override_opt) go.prompt_override = prompt_override;
      if (*suffix_opt) go.prompt_suffix = prompt_suffix;
      if (*transform_opt) go.reference_transform = transform;
      if (*out_opt) go.out_dir = fs::path(out_dir);
      const auto r = cmd_generate(cfg, go, *be);
      for (const auto& w : r.warnings) err << "warning: " << w << "\n";
      out << r.bundle_dir.string() << "\n";
      return 0;
    }
    if (*evaluate) {
      EvaluateOptions eo;
      eo.bundle_dir = bundle_dir;
      eo.reference = reference_path;
      if (*prompt_opt) eo.prompt_text = prompt_text;
      const auto r = cmd_evaluate(cfg, eo, *be);
      out << "itc " << r.report.itc << " clip " << r.report.clip_similarity << " fid " << r.report.fid << " vqa "
          << r.report.vqa_score << "\n";
      print_deltas(out, r.report);
      out << r.report_path.string() << "\n";
      return 0;
    }
  } catch (const StageError& e) {
    err << "error [" << e.stage() << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}

}  // namespace vqadiff
