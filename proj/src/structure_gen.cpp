#include "vqadiff/structure_gen.hpp"

#include <chrono>
#include <fstream>
#include <thread>

#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/http_backends.hpp"
#include "vqadiff/parallel.hpp"

namespace vqadiff::structure {

namespace fs = std::filesystem;
using backends::BackendKind;

namespace {

std::string neighbor_id(int k) { return "neighbor_" + std::to_string(k); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

Image load_view(const fs::path& root, const std::string& instance, int index) {
  const auto path = root / instance / geometry::view_file_name(index);
  try {
    return to_rgb(read_png(path));
  } catch (const Error& e) {
    fail(ErrorCode::incomplete_instance,
         "instance " + instance + " view " + std::to_string(index) + " unreadable (" + path.string() + "): " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainingConfig::validate() const {
  require(epochs > 0, ErrorCode::config, "training.epochs must be positive");
  require(learning_rate > 0, ErrorCode::config, "training.learning_rate must be positive");
  require(batch_size > 0, ErrorCode::config, "training.batch_size must be positive");
  require(!optimizer_name.empty(), ErrorCode::config, "training.optimizer must be set");
  require(!base_model_id.empty(), ErrorCode::config, "training.base_model must be set");
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"epochs", epochs},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"optimizer", optimizer_name},
          {"base_model", base_model_id}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer_name = j.value("optimizer", c.optimizer_name);
  c.base_model_id = j.value("base_model", c.base_model_id);
  return c;
}

std::string_view to_string(LayoutMode m) { return m == LayoutMode::multi_expert ? "multi_expert" : "single_dm"; }

LayoutMode layout_from_string(std::string_view s) {
  if (s == "multi_expert") return LayoutMode::multi_expert;
  if (s == "single_dm") return LayoutMode::single_dm;
  fail(ErrorCode::config, "unknown layout mode '" + std::string(s) + "'");
}

void Layout::validate() const {
  if (mode == LayoutMode::multi_expert) {
    // Anchor and neighbour outputs are both 2x2 grids.
    require(stride == 4 && n_views == 16, ErrorCode::config,
            "multi_expert layout needs n_views 16 and stride 4 (2x2 grids)");
  } else {
    require(grid_k >= 2 && grid_k <= 4, ErrorCode::config, "single_dm grid_k must be 2, 3 or 4");
    require(n_views == grid_k * grid_k, ErrorCode::config, "single_dm n_views must equal grid_k^2");
  }
}

grid::ExpertAssignment Layout::assignment() const {
  require(mode == LayoutMode::multi_expert, ErrorCode::invalid_argument, "single_dm layout has no expert assignment");
  return grid::expert_assignment(n_views, stride);
}

nlohmann::json Layout::to_json() const {
  return {{"mode", std::string(to_string(mode))}, {"n_views", n_views}, {"stride", stride}, {"grid_k", grid_k}};
}

Layout Layout::from_json(const nlohmann::json& j) {
  Layout l;
  l.mode = layout_from_string(j.value("mode", std::string("multi_expert")));
  l.n_views = j.value("n_views", l.n_views);
  l.stride = j.value("stride", l.stride);
  l.grid_k = j.value("grid_k", l.grid_k);
  return l;
}

// ---------------------------------------------------------------------------

nlohmann::json TrainingPair::to_json() const {
  nlohmann::json j = {{"instance_id", instance_id}, {"expert_id", expert_id}, {"target_grid_path", target_grid_path}};
  if (!prompt.empty()) j["prompt"] = prompt;
  if (!anchor_path.empty()) j["anchor_path"] = anchor_path;
  return j;
}

TrainingPair TrainingPair::from_json(const nlohmann::json& j) {
  TrainingPair p;
  p.instance_id = j.value("instance_id", "");
  p.expert_id = j.at("expert_id").get<std::string>();
  p.prompt = j.value("prompt", "");
  p.anchor_path = j.value("anchor_path", "");
  p.target_grid_path = j.at("target_grid_path").get<std::string>();
  return p;
}

std::size_t TrainingManifests::pair_count() const {
  std::size_t n = 0;
  for (const auto& d : datasets) n += d.pairs.size();
  return n;
}

std::vector<std::string> list_instances(const fs::path& render_root) {
  require(fs::is_directory(render_root), ErrorCode::io, "render root " + render_root.string() + " is not a directory");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(render_root)) {
    if (!entry.is_directory()) continue;
    const auto& dir = entry.path();
    if (fs::exists(dir / "manifest.json") || fs::exists(dir / geometry::view_file_name(0))) {
      ids.push_back(dir.filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

int ensure_prompts(backends::Backends& be, const fs::path& render_root, int n_views) {
  int written = 0;
  for (const auto& id : list_instances(render_root)) {
    const auto path = render_root / id / "prompt.json";
    if (fs::exists(path)) continue;
    require(n_views > 0, ErrorCode::invalid_argument, "ensure_prompts: n_views must be positive");
    const auto prompt = vqa::extract_description(be, load_view(render_root, id, 0));
    write_text(path, prompt.to_json().dump(2) + "\n");
    ++written;
  }
  return written;
}

TrainingManifests build_training_pairs(const fs::path& render_root, const Layout& layout, const fs::path& out_dir) {
  layout.validate();
  TrainingManifests out;
  out.layout = layout;
  out.instances = list_instances(render_root);
  require(!out.instances.empty(), ErrorCode::incomplete_instance, "no instances under " + render_root.string());

  // Report every gap at once so the render job can be fixed in one pass.
  std::string gaps;
  for (const auto& id : out.instances) {
    std::vector<int> missing;
    for (int v = 0; v < layout.n_views; ++v) {
      if (!fs::exists(render_root / id / geometry::view_file_name(v))) missing.push_back(v);
    }
    const bool no_prompt = !fs::exists(render_root / id / "prompt.json");
    if (missing.empty() && !no_prompt) continue;
    gaps += "\n  " + id + ":";
    if (!missing.empty()) {
      gaps += " missing views";
      for (int v : missing) gaps += " " + std::to_string(v);
    }
    if (no_prompt) gaps += " missing prompt.json";
  }
  if (!gaps.empty()) fail(ErrorCode::incomplete_instance, "incomplete instances:" + gaps);

  const fs::path grid_dir = out_dir / "grids";
  std::error_code ec;
  fs::create_directories(grid_dir, ec);
  require(!ec, ErrorCode::io, "cannot create " + grid_dir.string() + ": " + ec.message());

  std::map<std::string, DatasetManifest> sets;
  std::vector<std::string> order;
  auto dataset = [&](const std::string& expert) -> DatasetManifest& {
    auto [it, fresh] = sets.try_emplace(expert);
    if (fresh) {
      it->second.expert_id = expert;
      it->second.path = out_dir / (expert + ".jsonl");
      order.push_back(expert);
    }
    return it->second;
  };
  std::map<std::string, nlohmann::json> digest_input;

  for (const auto& id : out.instances) {
    const auto prompt = vqa::VehiclePrompt::from_json(read_json(render_root / id / "prompt.json"));
    require(!prompt.answer.empty(), ErrorCode::incomplete_instance, "instance " + id + ": prompt.json has an empty answer");
    std::vector<Image> views;
    views.reserve(layout.n_views);
    for (int v = 0; v < layout.n_views; ++v) views.push_back(load_view(render_root, id, v));
    for (int v = 1; v < layout.n_views; ++v) {
      require(views[v].width == views[0].width && views[v].height == views[0].height, ErrorCode::incomplete_instance,
              "instance " + id + " view " + std::to_string(v) + " has a different resolution from view 0");
    }

    auto add = [&](TrainingPair pair, const Image& target, int anchor_view = -1) {
      write_png(target, grid_dir / pair.target_grid_path);
      // Relative to the manifest directory so the dataset can move as a unit.
      pair.target_grid_path = "grids/" + pair.target_grid_path;
      nlohmann::json rec = {{"instance_id", id}, {"target", image_digest(target)}};
      if (!pair.prompt.empty()) rec["prompt"] = pair.prompt;
      if (anchor_view >= 0) rec["anchor"] = image_digest(views[anchor_view]);
      digest_input[pair.expert_id].push_back(rec);
      dataset(pair.expert_id).pairs.push_back(std::move(pair));
    };

    if (layout.mode == LayoutMode::single_dm) {
      const Image g = grid::tile_square(views, layout.grid_k);
      add({id, "single", prompt.answer, "", id + "_grid" + std::to_string(layout.grid_k) + ".png"}, g);
      continue;
    }
    const auto assignment = layout.assignment();
    auto tile_of = [&](const std::array<int, 4>& idx) {
      const std::array<Image, 4> four{views[idx[0]], views[idx[1]], views[idx[2]], views[idx[3]]};
      return grid::tile(four, idx).image;
    };
    std::array<int, 4> anchors{};
    std::copy_n(assignment.anchor_indices.begin(), 4, anchors.begin());
    add({id, "anchor", prompt.answer, "", grid::anchor_grid_name(id)}, tile_of(anchors));
    for (int k = 0; k < static_cast<int>(assignment.anchor_indices.size()); ++k) {
      const int a = assignment.anchor_indices[k];
      const auto& block = assignment.neighbor_map.at(a);
      std::array<int, 4> idx{};
      std::copy_n(block.begin(), 4, idx.begin());
      const auto anchor_path = (render_root / id / geometry::view_file_name(a)).string();
      add({id, neighbor_id(k), "", anchor_path, grid::expert_grid_name(id, k)}, tile_of(idx), a);
    }
  }

  for (const auto& name : order) {
    auto& d = sets.at(name);
    std::string lines;
    for (const auto& p : d.pairs) lines += p.to_json().dump() + "\n";
    write_text(d.path, lines);
    d.digest = json_digest({{"expert_id", name}, {"pairs", digest_input[name]}});
    out.datasets.push_back(std::move(d));
  }
  save_manifests(out, out_dir);
  return out;
}

void save_manifests(const TrainingManifests& m, const fs::path& dir) {
  nlohmann::json sets = nlohmann::json::array();
  for (const auto& d : m.datasets) {
    sets.push_back({{"expert_id", d.expert_id},
                    {"path", d.path.lexically_relative(dir).generic_string()},
                    {"digest", d.digest},
                    {"pairs", d.pairs.size()}});
  }
  write_text(dir / "datasets.json",
             nlohmann::json{{"layout", m.layout.to_json()}, {"instances", m.instances}, {"datasets", sets}}.dump(2) + "\n");
}

TrainingManifests load_manifests(const fs::path& dir) {
  const auto j = read_json(dir / "datasets.json");
  TrainingManifests m;
  try {
    m.layout = Layout::from_json(j.at("layout"));
    m.instances = j.at("instances").get<std::vector<std::string>>();
    for (const auto& d : j.at("datasets")) {
      DatasetManifest ds;
      ds.expert_id = d.at("expert_id").get<std::string>();
      ds.path = dir / d.at("path").get<std::string>();
      ds.digest = d.at("digest").get<std::string>();
      std::ifstream in(ds.path);
      if (!in) fail(ErrorCode::validation, "dataset manifest missing: " + ds.path.string());
      for (std::string line; std::getline(in, line);) {
        if (!line.empty()) ds.pairs.push_back(TrainingPair::from_json(nlohmann::json::parse(line)));
      }
      require(ds.pairs.size() == d.at("pairs").get<std::size_t>(), ErrorCode::validation,
              ds.path.string() + ": pair count does not match datasets.json");
      m.datasets.push_back(std::move(ds));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, (dir / "datasets.json").string() + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------

nlohmann::json TrainingJobSpec::to_json() const {
  return {{"expert_id", expert_id},
          {"kind", std::string(backends::to_string(kind))},
          {"dataset_path", dataset_path},
          {"dataset_digest", dataset_digest},
          {"config", config.to_json()}};
}

std::string StubTrainingBackend::submit(const TrainingJobSpec& spec) {
  std::lock_guard lock(mu_);
  jobs_.push_back(spec);
  return "stub-job-" + std::to_string(jobs_.size() - 1);
}

TrainingJobStatus StubTrainingBackend::poll(const std::string& job_id) {
  std::lock_guard lock(mu_);
  const std::string prefix = "stub-job-";
  require(job_id.rfind(prefix, 0) == 0, ErrorCode::invalid_argument, "unknown training job " + job_id);
  const auto index = std::stoul(job_id.substr(prefix.size()));
  require(index < jobs_.size(), ErrorCode::invalid_argument, "unknown training job " + job_id);
  const auto& spec = jobs_[index];
  TrainingJobStatus st;
  st.job_id = job_id;
  st.log_ref = "stub://train/" + job_id;
  if (std::find(failing_.begin(), failing_.end(), spec.expert_id) != failing_.end()) {
    st.state = "failed";
    return st;
  }
  st.state = "succeeded";
  st.model_id = "ft-" + spec.expert_id + "-" +
                sha256_hex(spec.dataset_digest + "\n" + spec.config.to_json().dump()).substr(0, 12);
  return st;
}

std::vector<TrainingJobSpec> StubTrainingBackend::jobs() const {
  std::lock_guard lock(mu_);
  return jobs_;
}

namespace {

class HttpTrainingBackend final : public TrainingBackend {
 public:
  explicit HttpTrainingBackend(backends::BackendDescriptor desc) : http_(std::move(desc)) {}

  std::string submit(const TrainingJobSpec& spec) override {
    const auto body = spec.to_json();
    const auto r = http_.post("/train", body, json_digest(body));
    require(r.contains("job_id") && r["job_id"].is_string(), ErrorCode::backend_error, "/train: missing job_id");
    return r["job_id"].get<std::string>();
  }

  TrainingJobStatus poll(const std::string& job_id) override {
    const auto r = http_.get("/train/" + job_id);
    TrainingJobStatus st;
    st.job_id = job_id;
    st.state = r.value("state", "");
    st.model_id = r.value("model_id", "");
    st.log_ref = r.value("log", "");
    require(!st.state.empty(), ErrorCode::backend_error, "/train/" + job_id + ": missing state");
    return st;
  }

 private:
  backends::HttpTransport http_;
};

}  // namespace

std::unique_ptr<TrainingBackend> make_training_backend(const std::string& endpoint, double timeout_s) {
  if (endpoint == "stub") return std::make_unique<StubTrainingBackend>();
  backends::BackendDescriptor d;
  d.kind = BackendKind::text2image;
  d.endpoint = endpoint;
  d.model_id = "trainer";
  d.timeout_s = timeout_s;
  return std::make_unique<HttpTrainingBackend>(d);
}

// ---------------------------------------------------------------------------

void ExpertSet::validate() const {
  layout.validate();
  require(anchor_expert.kind == BackendKind::text2image, ErrorCode::config, "anchor expert must be a text2image backend");
  anchor_expert.validate();
  if (layout.mode == LayoutMode::single_dm) {
    require(neighbor_experts.empty(), ErrorCode::config, "single_dm layout takes no neighbor experts");
  } else {
    const auto a = layout.assignment();
    require(neighbor_experts.size() == a.anchor_indices.size(), ErrorCode::config,
            "expected " + std::to_string(a.anchor_indices.size()) + " neighbor experts, got " +
                std::to_string(neighbor_experts.size()));
  }
  for (const auto& n : neighbor_experts) {
    require(n.kind == BackendKind::image2image, ErrorCode::config, "neighbor experts must be image2image backends");
    n.validate();
  }
  training_config.validate();
}

nlohmann::json ExpertSet::to_json() const {
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& n : neighbor_experts) neighbors.push_back(n.to_json());
  return {{"layout", layout.to_json()},
          {"anchor_expert", anchor_expert.to_json()},
          {"neighbor_experts", neighbors},
          {"training_config", training_config.to_json()},
          {"provenance", provenance}};
}

std::string ExpertSet::digest() const {
  nlohmann::json ids = {{"layout", layout.to_json()}, {"anchor", anchor_expert.digest()}};
  for (const auto& n : neighbor_experts) ids["neighbors"].push_back(n.digest());
  return json_digest(ids);
}

ExpertSet ExpertSet::from_json(const nlohmann::json& j) {
  ExpertSet e;
  e.layout = Layout::from_json(j.at("layout"));
  e.anchor_expert = backends::BackendDescriptor::from_json(j.at("anchor_expert"), BackendKind::text2image);
  for (const auto& n : j.value("neighbor_experts", nlohmann::json::array())) {
    e.neighbor_experts.push_back(backends::BackendDescriptor::from_json(n, BackendKind::image2image));
  }
  e.training_config = TrainingConfig::from_json(j.value("training_config", nlohmann::json::object()));
  e.provenance = j.value("provenance", nlohmann::json::object());
  e.validate();
  return e;
}

void ExpertSet::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, to_json().dump(2) + "\n");
}

ExpertSet ExpertSet::load(const fs::path& path) { return from_json(read_json(path)); }

ExpertSet default_experts(const std::map<BackendKind, backends::BackendDescriptor>& descriptors, const Layout& layout,
                          const TrainingConfig& config) {
  layout.validate();
  ExpertSet e;
  e.layout = layout;
  e.training_config = config;
  e.anchor_expert = descriptors.at(BackendKind::text2image);
  if (layout.mode == LayoutMode::single_dm) {
    e.anchor_expert.model_id += "/single" + std::to_string(layout.grid_k);
  } else {
    e.anchor_expert.model_id += "/anchor";
    const auto& base = descriptors.at(BackendKind::image2image);
    for (std::size_t k = 0; k < layout.assignment().anchor_indices.size(); ++k) {
      auto d = base;
      d.model_id += "/" + neighbor_id(static_cast<int>(k));
      e.neighbor_experts.push_back(d);
    }
  }
  e.provenance = {{"trained", false}};
  e.validate();
  return e;
}

ExpertSet train_experts(const TrainingManifests& manifests, const TrainingConfig& config, TrainingBackend& trainer,
                        const std::map<BackendKind, backends::BackendDescriptor>& descriptors, const TrainOptions& opts) {
  config.validate();
  manifests.layout.validate();
  require(!manifests.datasets.empty(), ErrorCode::invalid_argument, "train_experts: no datasets");

  std::vector<TrainingJobSpec> specs;
  for (const auto& d : manifests.datasets) {
    require(!d.pairs.empty(), ErrorCode::invalid_argument, "train_experts: dataset " + d.expert_id + " is empty");
    TrainingJobSpec s;
    s.expert_id = d.expert_id;
    s.kind = d.expert_id.rfind("neighbor_", 0) == 0 ? BackendKind::image2image : BackendKind::text2image;
    s.dataset_path = d.path.string();
    s.dataset_digest = d.digest;
    s.config = config;
    specs.push_back(std::move(s));
  }

  std::vector<TrainingJobStatus> results(specs.size());
  bounded_for(specs.size(), opts.max_in_flight, [&](std::size_t i) {
    const auto job = trainer.submit(specs[i]);
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(opts.timeout_s);
    for (;;) {
      auto st = trainer.poll(job);
      if (st.state == "succeeded") {
        require(!st.model_id.empty(), ErrorCode::training_failed,
                "training job " + job + " (" + specs[i].expert_id + ") succeeded without a model id");
        results[i] = std::move(st);
        return;
      }
      if (st.state == "failed") {
        fail(ErrorCode::training_failed,
             "training job " + job + " (" + specs[i].expert_id + ") failed; log: " + st.log_ref);
      }
      if (std::chrono::steady_clock::now() > deadline) {
        fail(ErrorCode::training_failed, "training job " + job + " (" + specs[i].expert_id + ") did not finish in time");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(opts.poll_interval_ms));
    }
  });

  ExpertSet e = default_experts(descriptors, manifests.layout, config);
  nlohmann::json datasets = nlohmann::json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& id = specs[i].expert_id;
    if (id == "anchor" || id == "single") {
      e.anchor_expert.model_id = results[i].model_id;
    } else {
      const int k = std::stoi(id.substr(std::string("neighbor_").size()));
      require(k >= 0 && k < static_cast<int>(e.neighbor_experts.size()), ErrorCode::invalid_argument,
              "train_experts: unexpected dataset " + id);
      e.neighbor_experts[k].model_id = results[i].model_id;
    }
    datasets.push_back({{"expert_id", id},
                        {"dataset_digest", specs[i].dataset_digest},
                        {"pairs", manifests.datasets[i].pairs.size()},
                        {"job_id", results[i].job_id},
                        {"model_id", results[i].model_id},
                        {"log", results[i].log_ref}});
  }
  e.provenance = {{"trained", true},
                  {"training_config", config.to_json()},
                  {"instances", manifests.instances},
                  {"datasets", datasets}};
  e.validate();
  return e;
}

// ---------------------------------------------------------------------------

StructureViews generate_structures(backends::Backends& be, const vqa::VehiclePrompt& prompt, const ExpertSet& experts,
                                   std::uint64_t seed, const geometry::CameraRing& ring, const StructureOptions& opts) {
  experts.validate();
  require(!prompt.answer.empty(), ErrorCode::invalid_argument, "generate_structures: prompt answer is empty");
  require(ring.n_views == experts.layout.n_views && static_cast<int>(ring.poses.size()) == ring.n_views,
          ErrorCode::invalid_argument, "generate_structures: ring has " + std::to_string(ring.n_views) +
                                           " views, layout expects " + std::to_string(experts.layout.n_views));
  constexpr int sub = grid::kDefaultSubSize;

  StructureViews out;
  out.ring = ring;
  out.prompt = prompt;
  out.views.resize(ring.n_views);

  auto request = [&](std::uint64_t s, int size, const std::string& stage) {
    backends::GenerationRequest req;
    req.prompt = prompt.answer;
    req.seed = s;
    req.width = req.height = size;
    req.stage = stage;
    return req;
  };

  if (experts.layout.mode == LayoutMode::single_dm) {
    const int k = experts.layout.grid_k;
    backends::CallSummary call;
    Image g;
    try {
      g = be.generate_with(experts.anchor_expert, request(seed, k * sub, "structure.single"), &call);
    } catch (const Error& e) {
      throw StageError("structure.single", e);
    }
    auto views = grid::split_square(g, k);
    for (int i = 0; i < ring.n_views; ++i) out.views[i] = std::move(views[i]);
    out.calls.push_back(call);
    out.seeds.push_back(seed);
    return out;
  }

  const auto assignment = experts.assignment();
  const int n_anchor = static_cast<int>(assignment.anchor_indices.size());

  backends::CallSummary anchor_call;
  Image anchor_grid;
  try {
    anchor_grid = be.generate_with(experts.anchor_expert, request(seed, 2 * sub, "structure.anchor"), &anchor_call);
  } catch (const Error& e) {
    throw StageError("structure.anchor", e);
  }
  const auto anchors = grid::split(anchor_grid);
  out.calls.push_back(anchor_call);
  out.seeds.push_back(seed);

  std::vector<backends::CallSummary> calls(n_anchor);
  std::vector<std::array<Image, 4>> blocks(n_anchor);
  out.anchor_consistency.assign(n_anchor, 0.0);
  bounded_for(n_anchor, opts.max_in_flight, [&](std::size_t k) {
    auto req = request(seed + 1 + k, 2 * sub, "structure.neighbor");
    req.init_image = anchors[k];
    try {
      blocks[k] = grid::split(be.generate_with(experts.neighbor_experts[k], std::move(req), &calls[k]));
      const auto fed = be.embed_image(anchors[k], "structure.consistency");
      const auto regen = be.embed_image(blocks[k][0], "structure.consistency");
      out.anchor_consistency[k] = backends::cosine(fed, regen);
    } catch (const Error& e) {
      throw StageError("structure.neighbor_" + std::to_string(k), e);
    }
  });

  for (int k = 0; k < n_anchor; ++k) {
    const auto& block = assignment.neighbor_map.at(assignment.anchor_indices[k]);
    for (int q = 0; q < 4; ++q) out.views[block[q]] = std::move(blocks[k][q]);
    out.calls.push_back(calls[k]);
    out.seeds.push_back(seed + 1 + k);
    if (out.anchor_consistency[k] < opts.consistency_threshold) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "consistency-warning: anchor %d similarity %.4f below %.4f",
                    assignment.anchor_indices[k], out.anchor_consistency[k], opts.consistency_threshold);
      out.warnings.emplace_back(buf);
    }
  }
  return out;
}

}  // namespace vqadiff::structure
