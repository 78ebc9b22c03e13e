#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/QR>

#include "doctest.h"
#include "oracles/fid_closed_form.hpp"
#include "published_rows.hpp"
#include "support.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/evalsuite.hpp"
#include "vqadiff/stub_backends.hpp"

using namespace vqadiff;
using namespace vqadiff::backends;
using namespace vqadiff::eval;

namespace {

FeatureSet random_set(std::mt19937& rng, int n, int d, double shift = 0) {
  std::normal_distribution<double> g(0, 1);
  FeatureSet f;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng) + shift;
    f.vectors.push_back(v);
  }
  return f;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::filesystem::path kFixtures = std::filesystem::path(VQADIFF_DATA_DIR) / "reference_metrics.json";

}  // namespace

TEST_CASE("fid of identical sets is zero") {
  std::mt19937 rng(1);
  const auto a = random_set(rng, 20, 6);
  CHECK(fid(a, a) < 1e-6);
  CHECK(fid(a, a) >= 0);
}

TEST_CASE("fid 1-D closed form") {
  const double s = 1 / std::sqrt(2.0);  // two samples at +-s have unit sample variance
  FeatureSet a{{{-s}, {s}}, "t"}, b{{{1 - s}, {1 + s}}, "t"};
  CHECK(std::abs(fid(a, b) - 1.0) < 1e-6);

  std::mt19937 rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_set(rng, 7, 1), y = random_set(rng, 11, 1, 0.5);
    std::vector<double> xs, ys;
    for (auto& v : x.vectors) xs.push_back(v[0]);
    for (auto& v : y.vectors) ys.push_back(v[0]);
    CHECK(std::abs(fid(x, y) - oracle::fid_1d(xs, ys)) < 1e-9);
  }
}

TEST_CASE("fid diagonal covariance matches per-axis sum") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.2, 3);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> ma(8), sa(8), mb(8), sb(8);
    for (int k = 0; k < 8; ++k) {
      ma[k] = u(rng);
      sa[k] = u(rng);
      mb[k] = u(rng);
      sb[k] = u(rng);
    }
    const auto pa = oracle::diagonal_set(ma, sa), pb = oracle::diagonal_set(mb, sb);
    const double want = oracle::fid_diagonal(pa, pb);
    CHECK(std::abs(fid({pa, "t"}, {pb, "t"}) - want) < 1e-6);
  }
}

TEST_CASE("fid symmetry and rotation invariance") {
  std::mt19937 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_set(rng, 12, 5), b = random_set(rng, 9, 5, 0.3);
    CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-8);
  }
  std::normal_distribution<double> g(0, 1);
  for (int t = 0; t < 10; ++t) {
    Eigen::MatrixXd m(4, 4);
    for (int i = 0; i < 16; ++i) m.data()[i] = g(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
    auto rotate = [&](const FeatureSet& f) {
      FeatureSet out{{}, f.extractor_id};
      for (const auto& v : f.vectors) {
        const Eigen::VectorXd r = q * Eigen::Map<const Eigen::VectorXd>(v.data(), 4);
        out.vectors.emplace_back(r.data(), r.data() + 4);
      }
      return out;
    };
    const auto a = random_set(rng, 10, 4), b = random_set(rng, 14, 4, 1.0);
    CHECK(std::abs(fid(a, b) - fid(rotate(a), rotate(b))) < 1e-6);
  }
}

TEST_CASE("fid with identical statistics") {
  // two different multisets with equal mean and covariance
  const double s = 1.0;
  FeatureSet a{{{-s, 0}, {s, 0}, {0, -s}, {0, s}}, "t"};
  FeatureSet b{{{0, s}, {s, 0}, {0, -s}, {-s, 0}}, "t"};
  CHECK(fid(a, b) < 1e-6);
}

TEST_CASE("fid argument errors") {
  FeatureSet one{{{1, 2}}, "t"}, two{{{1, 2}, {3, 4}}, "t"}, other{{{1}, {2}}, "t"};
  CHECK_THROWS_AS(fid(one, two), Error);
  CHECK_THROWS_AS(fid(two, other), Error);
  FeatureSet nan{{{1, NAN}, {3, 4}}, "t"};
  CHECK_THROWS_AS(fid(nan, two), Error);
}

TEST_CASE("clip similarity") {
  Backends be(stub_descriptors());
  std::mt19937 rng(5);
  const auto ref = testsupport::random_image(rng, 24, 24);
  const std::vector<Image> self{ref};
  CHECK(std::abs(clip_similarity(be, self, ref) - 1.0) < 1e-6);
  const std::vector<Image> views{testsupport::random_image(rng, 24, 24), testsupport::random_image(rng, 24, 24)};
  StubEmbedding emb;
  const double c0 = cosine(emb.embed_image(views[0]), emb.embed_image(ref));
  const double c1 = cosine(emb.embed_image(views[1]), emb.embed_image(ref));
  CHECK(clip_similarity(be, views, ref) == doctest::Approx((c0 + c1) / 2).epsilon(1e-12));
  const std::vector<Image> swapped{views[1], views[0]};
  CHECK(clip_similarity(be, swapped, ref) == doctest::Approx(clip_similarity(be, views, ref)).epsilon(1e-12));
  CHECK_THROWS_AS(clip_similarity(be, std::vector<Image>{}, ref), Error);
}

TEST_CASE("itc is a mean over views") {
  Backends be(stub_descriptors());
  std::mt19937 rng(6);
  const auto v = testsupport::random_image(rng, 16, 16);
  const std::vector<Image> one{v}, three{v, v, v};
  CHECK(itc_score(be, one, "a red truck") == doctest::Approx(itc_score(be, three, "a red truck")).epsilon(1e-12));
  CHECK(itc_score(be, one, "a red truck") == itc_score(be, one, "a red truck"));
  CHECK_THROWS_AS(itc_score(be, one, ""), Error);
}

TEST_CASE("vqa score") {
  Backends be(stub_descriptors());
  auto f = VqaFixtures::defaults();
  f.yes_probability = 0.5;
  be.set_vqa(std::make_shared<StubVqa>(f));
  std::mt19937 rng(7);
  std::vector<Image> views;
  for (int i = 0; i < 5; ++i) views.push_back(testsupport::random_image(rng, 8, 8));
  CHECK(vqa_score(be, views, "a truck") == 0.5);

  Backends be2(stub_descriptors());
  const double s = vqa_score(be2, views, "a truck");
  CHECK(s >= 0);
  CHECK(s <= 1);
  const auto recs = be2.trace().records();
  CHECK(recs.size() == 5);
}

TEST_CASE("txt2txt score") {
  Backends be(stub_descriptors());
  CHECK(std::abs(txt2txt_score(be, "a grey sedan", "a grey sedan") - 1) < 1e-6);
  CHECK(txt2txt_score(be, "a grey sedan", "a red truck") == txt2txt_score(be, "a red truck", "a grey sedan"));
  CHECK(txt2txt_score(be, "a", "b") == txt2txt_score(be, "a", "b"));
  CHECK_THROWS_AS(txt2txt_score(be, "", "b"), Error);
}

TEST_CASE("fixtures file carries every published cell verbatim") {
  const auto text = slurp(kFixtures);
  const auto fx = Fixtures::load(kFixtures);
  std::istringstream lines(text);
  std::map<std::string, std::string> row_lines;
  for (std::string line; std::getline(lines, line);) {
    const auto q = line.find('"');
    const auto q2 = line.find("\": {\"");
    if (q != std::string::npos && q2 != std::string::npos) row_lines[line.substr(q + 1, q2 - q - 1)] += line;
  }
  for (const auto& r : testsupport::published_rows()) {
    const auto& row = fx.row(r.table, r.method);
    const auto& line = row_lines[r.method];
    for (int m = 0; m < 4; ++m) {
      const std::string metric = testsupport::kPublishedMetrics[m];
      const std::string cell = r.cells[m];
      if (cell.empty()) {
        const auto it = row.find(metric);
        CHECK((it == row.end() || !it->second.has_value()));
      } else {
        CHECK(row.at(metric).value() == std::stod(cell));
        INFO(r.table, " / ", r.method, " / ", metric);
        CHECK(line.find("\"" + metric + "\": " + cell) != std::string::npos);
      }
    }
  }
  CHECK(fx.row("pascal3d", "Ours").at("fid").value() == 117.49);
  CHECK(fx.row("training_ablation", "Multi-expert DMs (50 epochs)").at("itc").value() == 0.333);
  CHECK_THROWS_AS(fx.row("pascal3d", "Nobody"), Error);
  CHECK_THROWS_AS(fx.row("nowhere", "Ours"), Error);
}

TEST_CASE("fixture deltas on synthetic reports") {
  const auto fx = Fixtures::load(kFixtures);
  EvalReport r;
  r.itc = 0.5;
  r.clip_similarity = 0.75;
  r.fid = 100.0;
  r.vqa_score = 0.25;
  const auto d = fixture_deltas(r, fx.row("pascal3d", "Ours"));
  CHECK(d.at("itc") == 0.5 - 0.380);
  CHECK(d.at("clip") == 0.75 - 0.856);
  CHECK(d.at("fid") == 100.0 - 117.49);
  CHECK(d.at("vqa") == 0.25 - 0.903);
  const auto gt = fixture_deltas(r, fx.row("waymo", "Ground Truth"));
  CHECK(gt.size() == 1);
  CHECK(gt.at("itc") == 0.5 - 0.422);
  const auto ab = fixture_deltas(r, fx.row("view_count_ablation", "Single DM (9)"));
  CHECK(ab.size() == 3);
  CHECK(ab.at("fid") == 100.0 - 150.31);
}

TEST_CASE("evaluate a stub bundle") {
  Backends be(stub_descriptors());
  appearance::AssetBundle b;
  std::mt19937 rng(8);
  for (int i = 0; i < 4; ++i) b.views.push_back(testsupport::random_image(rng, 32, 32));
  b.views.push_back({});  // a failed view is skipped
  const auto ref = testsupport::random_image(rng, 32, 32);
  EvalOptions o;
  const auto r = evaluate_bundle(be, b, ref, "a truck", o);
  CHECK(r.n_views == 4);
  for (const auto& [k, v] : r.metrics()) CHECK(std::isfinite(v));
  CHECK(r.fid >= 0);
  CHECK_FALSE(r.fixture_delta.has_value());
  CHECK(r.corpus["vqa_question"] == "Does this image show a truck?");

  o.fixtures = Fixtures::load(kFixtures);
  o.fixture_table = "objaverse";
  const auto withfx = evaluate_bundle(be, b, ref, "a truck", o);
  REQUIRE(withfx.fixture_delta.has_value());
  CHECK(withfx.fixture_delta->at("fid") == withfx.fid - 114.75);
  CHECK(withfx.fixture_delta->at("vqa") == withfx.vqa_score - 0.838);
  CHECK(EvalReport::from_json(withfx.to_json()).to_json() == withfx.to_json());

  appearance::AssetBundle empty;
  CHECK_THROWS_AS(evaluate_bundle(be, empty, ref, "x"), Error);
}

TEST_CASE("metric failures are tagged") {
  struct BrokenItc final : EmbeddingBackend {
    StubEmbedding inner;
    EmbeddingVector embed_image(const Image& i) override { return inner.embed_image(i); }
    EmbeddingVector embed_text(const std::string& t) override { return inner.embed_text(t); }
    EmbeddingVector embed_multimodal(const Image& i, const std::string& t) override {
      return inner.embed_multimodal(i, t);
    }
    double itc(const Image&, const std::string&) override { throw Error(ErrorCode::backend_error, "itc down"); }
  };
  Backends be(stub_descriptors());
  be.set_embedding(std::make_shared<BrokenItc>());
  appearance::AssetBundle b;
  b.views = {Image(8, 8, 3, 1), Image(8, 8, 3, 2)};
  try {
    evaluate_bundle(be, b, Image(8, 8, 3, 3), "x");
    FAIL("expected stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "metric.itc");
    CHECK(e.code() == ErrorCode::backend_error);
  }
}

TEST_CASE("aggregate csv") {
  testsupport::TempDir tmp("csv");
  EvalReport r;
  r.method_label = "Ours";
  r.n_views = 16;
  append_csv(tmp / "agg.csv", "bundle-a", r);
  append_csv(tmp / "agg.csv", "bundle,b", r);
  CHECK(csv_rows(tmp / "agg.csv") == 2);
  const auto text = slurp(tmp / "agg.csv");
  CHECK(text.rfind("bundle,method,n_views,itc,clip,fid,vqa\n", 0) == 0);
  CHECK(text.find("\"bundle,b\",Ours,16") != std::string::npos);
}

TEST_CASE("mirror") {
  std::mt19937 rng(9);
  const auto img = testsupport::random_image(rng, 7, 5);
  CHECK(mirror(mirror(img)) == img);
  CHECK(mirror(img).at(0, 2, 1) == img.at(6, 2, 1));
}
