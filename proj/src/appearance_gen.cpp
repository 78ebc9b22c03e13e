#include "vqadiff/appearance_gen.hpp"

#include <cstdio>
#include <fstream>

#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/parallel.hpp"

namespace vqadiff::appearance {

namespace fs = std::filesystem;

namespace {

nlohmann::json calls_to_json(const std::vector<backends::CallSummary>& calls) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& c : calls) a.push_back(c.to_json());
  return a;
}

std::vector<backends::CallSummary> calls_from_json(const nlohmann::json& j) {
  std::vector<backends::CallSummary> out;
  for (const auto& c : j) out.push_back(backends::CallSummary::from_json(c));
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCode::export_failed, "cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::validation, "bundle file missing: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

std::string edge_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "edge_%02d.png", index);
  return buf;
}

nlohmann::json AssetBundle::provenance() const {
  nlohmann::json view_digests = nlohmann::json::array(), edge_digests = nlohmann::json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    view_digests.push_back(views[i].empty() ? nlohmann::json(nullptr) : nlohmann::json(image_digest(views[i])));
    edge_digests.push_back(edge_maps[i].raster.empty() ? nlohmann::json(nullptr)
                                                       : nlohmann::json(image_digest(edge_maps[i].raster)));
  }
  nlohmann::json appearance_seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < views.size(); ++i) appearance_seeds.push_back(seed + i);
  return {
      {"seed", seed},
      {"canny", canny.to_json()},
      {"subject_embedding_digest", subject_digest},
      {"subject_calls", calls_to_json(subject_calls)},
      {"structure",
       {{"calls", calls_to_json(structure.calls)},
        {"seeds", structure.seeds},
        {"anchor_consistency", structure.anchor_consistency},
        {"view_digests", structure_digests},
        {"warnings", structure.warnings}}},
      {"appearance",
       {{"calls", calls_to_json(appearance_calls)},
        {"seeds", appearance_seeds},
        {"view_digests", view_digests},
        {"edge_digests", edge_digests}}},
      {"failed_views", failed_views},
      {"warnings", warnings},
      {"context", context},
  };
}

bool AssetBundle::verify(const std::vector<backends::TraceRecord>& trace) const {
  return backends::verify_calls(structure.calls, trace) && backends::verify_calls(subject_calls, trace) &&
         backends::verify_calls(appearance_calls, trace);
}

AssetBundle render_appearance(backends::Backends& be, const structure::StructureViews& structure,
                              const backends::EmbeddingVector& subject, const vqa::VehiclePrompt& prompt,
                              std::uint64_t seed, const AppearanceOptions& opts) {
  opts.canny.validate();
  const int n = static_cast<int>(structure.views.size());
  require(n > 0 && n == structure.ring.n_views, ErrorCode::invalid_argument,
          "render_appearance: structure has " + std::to_string(n) + " views for a ring of " +
              std::to_string(structure.ring.n_views));
  require(!prompt.answer.empty(), ErrorCode::invalid_argument, "render_appearance: prompt answer is empty");
  require(!subject.values.empty(), ErrorCode::invalid_argument, "render_appearance: empty subject embedding");
  double n2 = 0;
  for (double v : subject.values) n2 += v * v;
  require(std::abs(std::sqrt(n2) - 1.0) <= 1e-6, ErrorCode::invalid_argument,
          "render_appearance: subject embedding is not unit norm");

  AssetBundle b;
  b.structure = structure;
  b.ring = structure.ring;
  b.prompt = prompt;
  b.subject_digest = subject.digest();
  b.seed = seed;
  b.canny = opts.canny;
  b.warnings = structure.warnings;
  b.views.resize(n);
  b.edge_maps.resize(n);
  b.appearance_calls.resize(n);
  for (const auto& v : structure.views) b.structure_digests.push_back(image_digest(v));

  std::vector<std::string> errors(n);
  std::vector<std::optional<Error>> causes(n);
  bounded_for(n, opts.max_in_flight, [&](std::size_t i) {
    try {
      b.edge_maps[i] = canny(structure.views[i], opts.canny);
      backends::GenerationRequest req;
      req.prompt = prompt.answer;
      req.condition_image = b.edge_maps[i].raster;
      req.subject_embedding = subject.values;
      req.seed = seed + i;
      req.width = structure.views[i].width;
      req.height = structure.views[i].height;
      req.stage = "appearance.view";
      b.views[i] = be.generate(backends::BackendKind::edge2image, std::move(req), &b.appearance_calls[i]);
    } catch (const Error& e) {
      causes[i] = e;
    }
  });

  for (int i = 0; i < n; ++i) {
    if (!causes[i]) continue;
    b.failed_views.push_back(i);
    b.views[i] = {};
    b.appearance_calls[i] = {};
  }
  if (!b.failed_views.empty()) {
    const int first = b.failed_views.front();
    if (!opts.allow_partial) {
      char stage[32];
      std::snprintf(stage, sizeof stage, "appearance.view_%02d", first);
      throw StageError(stage, Error(causes[first]->code(), std::string(causes[first]->what()) + " (failed views: " +
                                                               std::to_string(b.failed_views.size()) + ")"));
    }
    b.warnings.push_back("partial-bundle: " + std::to_string(b.failed_views.size()) + " view(s) failed");
  }
  return b;
}

void export_bundle(const AssetBundle& bundle, const fs::path& out_dir) {
  const int n = static_cast<int>(bundle.views.size());
  require(static_cast<int>(bundle.edge_maps.size()) == n && bundle.ring.n_views == n, ErrorCode::export_failed,
          "export_bundle: views, edge maps and ring disagree in length");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::export_failed, "cannot create " + out_dir.string() + ": " + ec.message());
  try {
    for (int i = 0; i < n; ++i) {
      if (contains(bundle.failed_views, i)) continue;
      write_png(bundle.views[i], out_dir / geometry::view_file_name(i));
      write_png(bundle.edge_maps[i].raster, out_dir / edge_file_name(i));
    }
  } catch (const Error& e) {
    fail(ErrorCode::export_failed, std::string("export_bundle: ") + e.what());
  }
  write_json(out_dir / "poses.json", geometry::ring_to_json(bundle.ring));
  write_json(out_dir / "prompt.json", bundle.prompt.to_json());
  write_json(out_dir / "provenance.json", bundle.provenance());
}

std::vector<std::string> check_bundle(const fs::path& dir) {
  std::vector<std::string> missing;
  if (!fs::is_directory(dir)) return {dir.string() + " (directory)"};
  for (const char* f : {"poses.json", "prompt.json", "provenance.json"}) {
    if (!fs::is_regular_file(dir / f)) missing.push_back(f);
  }
  if (!missing.empty()) return missing;
  int n = 0;
  std::vector<int> failed;
  try {
    n = geometry::ring_from_json(read_json(dir / "poses.json")).n_views;
    failed = read_json(dir / "provenance.json").value("failed_views", std::vector<int>{});
  } catch (const Error& e) {
    return {e.what()};
  }
  for (int i = 0; i < n; ++i) {
    if (contains(failed, i)) continue;
    for (const auto& name : {geometry::view_file_name(i), edge_file_name(i)}) {
      if (!fs::is_regular_file(dir / name)) missing.push_back(name);
    }
  }
  return missing;
}

AssetBundle load_bundle(const fs::path& dir) {
  if (const auto missing = check_bundle(dir); !missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    fail(ErrorCode::validation, "invalid bundle " + dir.string() + ", missing:" + list);
  }
  AssetBundle b;
  b.ring = geometry::ring_from_json(read_json(dir / "poses.json"));
  b.prompt = vqa::VehiclePrompt::from_json(read_json(dir / "prompt.json"));
  const auto prov = read_json(dir / "provenance.json");
  try {
    b.seed = prov.at("seed").get<std::uint64_t>();
    b.canny = CannyParams::from_json(prov.at("canny"));
    b.subject_digest = prov.at("subject_embedding_digest").get<std::string>();
    b.subject_calls = calls_from_json(prov.at("subject_calls"));
    const auto& st = prov.at("structure");
    b.structure.calls = calls_from_json(st.at("calls"));
    b.structure.seeds = st.at("seeds").get<std::vector<std::uint64_t>>();
    b.structure.anchor_consistency = st.at("anchor_consistency").get<std::vector<double>>();
    b.structure.warnings = st.at("warnings").get<std::vector<std::string>>();
    b.structure_digests = st.at("view_digests").get<std::vector<std::string>>();
    b.appearance_calls = calls_from_json(prov.at("appearance").at("calls"));
    b.failed_views = prov.at("failed_views").get<std::vector<int>>();
    b.warnings = prov.at("warnings").get<std::vector<std::string>>();
    b.context = prov.value("context", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, "provenance.json: " + std::string(e.what()));
  }
  b.structure.ring = b.ring;
  b.structure.prompt = b.prompt;

  const int n = b.ring.n_views;
  b.views.resize(n);
  b.edge_maps.resize(n);
  const auto& app = prov.at("appearance");
  for (int i = 0; i < n; ++i) {
    if (contains(b.failed_views, i)) continue;
    try {
      b.views[i] = to_rgb(read_png(dir / geometry::view_file_name(i)));
      b.edge_maps[i] = {read_png(dir / edge_file_name(i)), b.canny};
    } catch (const Error& e) {
      fail(ErrorCode::validation, "bundle view " + std::to_string(i) + ": " + e.what());
    }
    // Files must match the digests recorded at export time.
    require(app.at("view_digests").at(i) == image_digest(b.views[i]), ErrorCode::validation,
            "bundle view " + std::to_string(i) + " does not match provenance digest");
    require(app.at("edge_digests").at(i) == image_digest(b.edge_maps[i].raster), ErrorCode::validation,
            "bundle edge map " + std::to_string(i) + " does not match provenance digest");
  }
  return b;
}

}  // namespace vqadiff::appearance
