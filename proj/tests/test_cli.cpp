#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "vqadiff/appearance_gen.hpp"
#include "vqadiff/backends.hpp"
#include "vqadiff/commands.hpp"
#include "vqadiff/digest.hpp"
#include "vqadiff/evalsuite.hpp"

using namespace vqadiff;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vqadiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

std::string last_line(const std::string& s) {
  auto t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  return t.substr(t.rfind('\n') + 1);
}

// Config, toy index and renders for three instances.
struct Workspace {
  testsupport::TempDir tmp{"cli"};
  fs::path config, index, renders, image;

  explicit Workspace(const std::string& extra = "") {
    config = tmp / "config.json";
    write_text(config, "{\"cache_dir\": \"cache\", \"seed\": 3" + extra + "}");
    index = tmp / "index.json";
    renders = tmp / "renders";
    write_text(index,
               R"([{"id": "car_a", "model_path": "a.obj", "bbox_min": [-1, -1, -1], "bbox_max": [1, 1, 1]},
                   {"id": "car_b", "model_path": "b.obj", "bbox_min": [0, 0, 0], "bbox_max": [2, 1, 1]},
                   {"id": "car_c", "model_path": "c.obj", "bbox_min": [-3, 0, 0], "bbox_max": [3, 2, 2]}])");
    image = tmp / "input.png";
    write_png(testsupport::rect_image(64, 64, 16, 24, 48, 44), image);
  }
  void render_all() {
    for (int i = 0; i < 3; ++i) {
      testsupport::make_instance(renders, std::string("car_") + char('a' + i), 16, 32, false, 10 + i);
    }
  }
  fs::path cache() const { return tmp / "cache"; }
  std::vector<backends::TraceRecord> trace() const { return backends::TraceLog::load(cache() / "trace.jsonl"); }
};

}  // namespace

TEST_CASE("build-dataset writes manifests, then pairs, then hits the cache") {
  Workspace w;
  auto r = cli({"-c", w.config.string(), "build-dataset", "--index", w.index.string(), "--render-root", w.renders.string()});
  CHECK(r.code == 4);
  CHECK(r.err.find("car_b: missing views 0 1 2") != std::string::npos);
  for (const char* id : {"car_a", "car_b", "car_c"}) CHECK(fs::exists(w.renders / id / "manifest.json"));

  w.render_all();
  r = cli({"-c", w.config.string(), "build-dataset", "--index", w.index.string(), "--render-root", w.renders.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("3 render manifests") != std::string::npos);
  CHECK(r.out.find("3 prompts written") != std::string::npos);
  CHECK(r.out.find("built 15 training pairs") != std::string::npos);
  CHECK(w.trace().size() == 3);  // one canonical question per instance

  r = cli({"-c", w.config.string(), "build-dataset", "--index", w.index.string(), "--render-root", w.renders.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("cached 15 training pairs") != std::string::npos);
  CHECK(w.trace().empty());

  const auto dataset = last_line(r.out);
  r = cli({"-c", w.config.string(), "train-experts", "--dataset", dataset});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trained 5 experts") != std::string::npos);
  CHECK(fs::exists(last_line(r.out)));
  r = cli({"-c", w.config.string(), "train-experts", "--dataset", dataset});
  CHECK(r.out.find("cached 5 experts") != std::string::npos);
  CHECK(cli({"-c", w.config.string(), "audit-cache"}).code == 0);
}

TEST_CASE("a corrupt render names instance and view") {
  Workspace w;
  w.render_all();
  write_text(w.renders / "car_b" / "view_05.png", "not a png");
  const auto r =
      cli({"-c", w.config.string(), "build-dataset", "--index", w.index.string(), "--render-root", w.renders.string()});
  CHECK(r.code == 4);
  CHECK(r.err.find("instance car_b view 5") != std::string::npos);
}

TEST_CASE("generate is deterministic and replayable") {
  Workspace w;
  auto r = cli({"-c", w.config.string(), "generate", "--image", w.image.string()});
  REQUIRE(r.code == 0);
  const fs::path bundle = last_line(r.out);
  const auto digest = directory_digest(bundle);
  const auto recs = w.trace();
  std::size_t structure_calls = 0, appearance_calls = 0;
  for (const auto& t : recs) {
    if (t.op != "generate") continue;
    if (t.stage.rfind("structure.", 0) == 0) ++structure_calls;
    if (t.stage.rfind("appearance.", 0) == 0) ++appearance_calls;
  }
  CHECK(structure_calls == 5);
  CHECK(appearance_calls == 16);

  // Cached re-run: same bundle, no backend calls.
  r = cli({"-c", w.config.string(), "generate", "--image", w.image.string()});
  REQUIRE(r.code == 0);
  CHECK(last_line(r.out) == bundle.string());
  CHECK(w.trace().empty());

  // Fresh cache, same digest.
  const auto other = w.tmp / "cache2";
  r = cli({"-c", w.config.string(), "--cache-dir", other.string(), "generate", "--image", w.image.string(), "--out",
           (w.tmp / "copy").string()});
  REQUIRE(r.code == 0);
  CHECK(directory_digest(w.tmp / "copy") == digest);

  const auto b = appearance::load_bundle(bundle);
  CHECK(b.views.size() == 16);
  CHECK_FALSE(b.prompt.answer.empty());

  r = cli({"-c", w.config.string(), "generate", "--image", w.image.string(), "--prompt-override", "a blue 1998 Volvo V70"});
  REQUIRE(r.code == 0);
  CHECK(appearance::load_bundle(last_line(r.out)).prompt.answer == "a blue 1998 Volvo V70");
  CHECK(w.trace().size() > 0);
  for (const auto& t : w.trace()) CHECK(t.op.rfind("vqa.", 0) != 0);

  r = cli({"-c", w.config.string(), "generate", "--image", w.image.string(), "--seed", "99"});
  REQUIRE(r.code == 0);
  CHECK(directory_digest(last_line(r.out)) != digest);
}

TEST_CASE("generate on a missing image fails without a cache entry") {
  Workspace w;
  const auto r = cli({"-c", w.config.string(), "generate", "--image", (w.tmp / "nope.png").string()});
  CHECK(r.code == 4);
  CHECK(r.err.find("nope.png") != std::string::npos);
  CHECK(Cache(w.cache()).entries().empty());
  write_text(w.tmp / "bad.png", "garbage");
  CHECK(cli({"-c", w.config.string(), "generate", "--image", (w.tmp / "bad.png").string()}).code == 4);
  CHECK(Cache(w.cache()).entries().empty());
}

TEST_CASE("evaluate appends one csv row per scored bundle") {
  Workspace w;
  auto r = cli({"-c", w.config.string(), "generate", "--image", w.image.string()});
  REQUIRE(r.code == 0);
  const auto bundle = last_line(r.out);
  r = cli({"-c", w.config.string(), "evaluate", "--bundle", bundle, "--reference", w.image.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("fixture deltas") == std::string::npos);
  CHECK(eval::csv_rows(w.cache() / "aggregate.csv") == 1);
  const auto report = eval::EvalReport::from_json(nlohmann::json::parse(std::ifstream(last_line(r.out))));
  CHECK(report.n_views == 16);
  CHECK(report.fid >= 0);

  // cached evaluation does not add a row
  r = cli({"-c", w.config.string(), "evaluate", "--bundle", bundle, "--reference", w.image.string()});
  REQUIRE(r.code == 0);
  CHECK(eval::csv_rows(w.cache() / "aggregate.csv") == 1);

  r = cli({"-c", w.config.string(), "evaluate", "--bundle", bundle, "--reference", w.image.string(), "--fixtures",
           (fs::path(VQADIFF_DATA_DIR) / "reference_metrics.json").string(), "--table", "waymo"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("fixture deltas (measured - published): clip=") != std::string::npos);
  CHECK(eval::csv_rows(w.cache() / "aggregate.csv") == 2);

  r = cli({"-c", w.config.string(), "evaluate", "--bundle", bundle, "--reference", w.image.string(), "--fixtures",
           (fs::path(VQADIFF_DATA_DIR) / "reference_metrics.json").string(), "--table", "nowhere"});
  CHECK(r.code == 2);
  CHECK(r.err.find("no table 'nowhere'") != std::string::npos);
  CHECK(eval::csv_rows(w.cache() / "aggregate.csv") == 2);
}

TEST_CASE("audit-cache reports an orphan") {
  Workspace w;
  REQUIRE(cli({"-c", w.config.string(), "generate", "--image", w.image.string()}).code == 0);
  auto r = cli({"-c", w.config.string(), "audit-cache"});
  CHECK(r.code == 0);
  CHECK(r.out.find("cache ok") != std::string::npos);
  write_text(w.cache() / "appearance" / "stray.txt", "x");
  r = cli({"-c", w.config.string(), "audit-cache"});
  CHECK(r.code == 4);
  CHECK(r.out.find("orphan appearance/stray.txt") != std::string::npos);
}

TEST_CASE("config errors exit with code 2") {
  {
    Workspace w(", \"layout\": {\"n_views\": 12}");
    const auto r = cli({"-c", w.config.string(), "audit-cache"});
    CHECK(r.code == 2);
    CHECK(r.err.find("layout") != std::string::npos);
  }
  {
    Workspace w(", \"consistency_threshold\": 4, \"eval\": {\"vqa_template\": \"no slot\"}");
    const auto r = cli({"-c", w.config.string(), "audit-cache"});
    CHECK(r.code == 2);
    // every problem in one message
    CHECK(r.err.find("consistency_threshold") != std::string::npos);
    CHECK(r.err.find("vqa_template") != std::string::npos);
  }
  {
    Workspace w;
    write_text(w.config, "{not json");
    CHECK(cli({"-c", w.config.string(), "audit-cache"}).code == 2);
  }
  CHECK(cli({}).code == 2);
  CHECK(cli({"generate"}).code == 2);
  CHECK(cli({"-c", "/does/not/exist.json", "audit-cache"}).code == 2);
}

TEST_CASE("unreachable backend exits with code 3") {
  Workspace w(R"(, "backends": {"vqa": {"endpoint": "http://127.0.0.1:1", "model_id": "x", "timeout_s": 1}})");
  const auto r = cli({"-c", w.config.string(), "generate", "--image", w.image.string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("prompt") != std::string::npos);
}
