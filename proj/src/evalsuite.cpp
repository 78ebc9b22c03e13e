#include "vqadiff/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "vqadiff/error.hpp"

namespace vqadiff::eval {

namespace {

std::pair<Eigen::VectorXd, Eigen::MatrixXd> moments(const FeatureSet& f) {
  const Eigen::Index n = static_cast<Eigen::Index>(f.vectors.size());
  const Eigen::Index d = static_cast<Eigen::Index>(f.dim());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(f.vectors[i].data(), d);
  Eigen::VectorXd mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(n - 1);
  return {mu, cov};
}

// Square root of a symmetric positive semi-definite matrix; negative eigenvalues clamp to 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  require(es.info() == Eigen::Success, ErrorCode::numerical_failure, "fid: eigendecomposition failed");
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

template <typename Fn>
double tagged(const char* metric, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw StageError(std::string("metric.") + metric, e);
  }
}

std::string fill_prompt(const std::string& tmpl, const std::string& prompt) {
  std::string q = tmpl;
  const std::string slot = "{prompt}";
  if (const auto p = q.find(slot); p != std::string::npos) q.replace(p, slot.size(), prompt);
  return q;
}

}  // namespace

void FeatureSet::validate() const {
  require(!vectors.empty(), ErrorCode::invalid_argument, "feature set is empty");
  const std::size_t d = vectors.front().size();
  require(d > 0, ErrorCode::invalid_argument, "feature vectors are empty");
  for (const auto& v : vectors) {
    require(v.size() == d, ErrorCode::invalid_argument, "feature vectors differ in dimension");
    for (double x : v) require(std::isfinite(x), ErrorCode::invalid_argument, "feature vector has a non-finite entry");
  }
}

double fid(const FeatureSet& a, const FeatureSet& b) {
  a.validate();
  b.validate();
  require(a.dim() == b.dim(), ErrorCode::invalid_argument,
          "fid: dimension mismatch " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  require(a.vectors.size() >= 2 && b.vectors.size() >= 2, ErrorCode::invalid_argument,
          "fid: each feature set needs at least 2 vectors");
  const auto [mu_a, cov_a] = moments(a);
  const auto [mu_b, cov_b] = moments(b);
  // Tr((Ca Cb)^1/2) = Tr((Ca^1/2 Cb Ca^1/2)^1/2); the inner product is symmetric PSD.
  const Eigen::MatrixXd sa = psd_sqrt(cov_a);
  const Eigen::MatrixXd inner = sa * cov_b * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorCode::numerical_failure, "fid: eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  require(std::isfinite(value), ErrorCode::numerical_failure, "fid: non-finite result");
  // Round-off can leave tiny negatives for identical statistics.
  return std::max(0.0, value);
}

Image mirror(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    }
  }
  return out;
}

FeatureSet image_features(backends::Backends& be, std::span<const Image> images, const std::string& stage) {
  FeatureSet f;
  f.extractor_id = be.descriptor(backends::BackendKind::embed).model_id;
  for (const auto& img : images) f.vectors.push_back(be.embed_image(img, stage).values);
  return f;
}

double clip_similarity(backends::Backends& be, std::span<const Image> generated, const Image& reference) {
  require(!generated.empty(), ErrorCode::invalid_argument, "clip_similarity: no generated views");
  const auto ref = be.embed_image(reference, "eval.clip");
  double sum = 0;
  for (const auto& v : generated) sum += backends::cosine(be.embed_image(v, "eval.clip"), ref);
  return sum / static_cast<double>(generated.size());
}

double itc_score(backends::Backends& be, std::span<const Image> views, const std::string& prompt_text) {
  require(!views.empty(), ErrorCode::invalid_argument, "itc_score: no views");
  require(!prompt_text.empty(), ErrorCode::invalid_argument, "itc_score: empty prompt");
  double sum = 0;
  for (const auto& v : views) sum += be.itc(v, prompt_text, "eval.itc");
  return sum / static_cast<double>(views.size());
}

double vqa_score(backends::Backends& be, std::span<const Image> views, const std::string& prompt_text,
                 const std::string& question_template) {
  require(!views.empty(), ErrorCode::invalid_argument, "vqa_score: no views");
  require(!prompt_text.empty(), ErrorCode::invalid_argument, "vqa_score: empty prompt");
  const std::string q = fill_prompt(question_template, prompt_text);
  double sum = 0;
  for (const auto& v : views) sum += std::clamp(be.vqa_yes_probability(v, q, "eval.vqa"), 0.0, 1.0);
  return std::clamp(sum / static_cast<double>(views.size()), 0.0, 1.0);
}

double txt2txt_score(backends::Backends& be, const std::string& answer, const std::string& caption) {
  require(!answer.empty() && !caption.empty(), ErrorCode::invalid_argument, "txt2txt_score: empty text");
  return backends::cosine(be.embed_text(answer, "eval.txt2txt"), be.embed_text(caption, "eval.txt2txt"));
}

// ---------------------------------------------------------------------------

Fixtures Fixtures::from_json(const nlohmann::json& j) {
  Fixtures f;
  require(j.is_object(), ErrorCode::config, "fixtures: top level must be an object");
  for (const auto& [table, body] : j.items()) {
    const auto& rows = body.contains("rows") ? body.at("rows") : body;
    for (const auto& [method, metrics] : rows.items()) {
      Row r;
      for (const auto& [name, value] : metrics.items()) {
        if (value.is_null()) {
          r[name] = std::nullopt;
        } else {
          require(value.is_number(), ErrorCode::config, "fixtures: " + table + "/" + method + "/" + name + " is not a number");
          r[name] = value.get<double>();
        }
      }
      f.tables[table][method] = std::move(r);
    }
  }
  return f;
}

Fixtures Fixtures::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open fixtures file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, "fixtures file " + path.string() + ": " + e.what());
  }
}

const Fixtures::Row& Fixtures::row(const std::string& table, const std::string& method) const {
  const auto t = tables.find(table);
  require(t != tables.end(), ErrorCode::config, "fixtures: no table '" + table + "'");
  const auto r = t->second.find(method);
  require(r != t->second.end(), ErrorCode::config, "fixtures: table '" + table + "' has no row '" + method + "'");
  return r->second;
}

// ---------------------------------------------------------------------------

std::map<std::string, double> EvalReport::metrics() const {
  return {{"itc", itc}, {"clip", clip_similarity}, {"fid", fid}, {"vqa", vqa_score}};
}

void EvalReport::validate() const {
  for (const auto& [name, v] : metrics()) {
    require(std::isfinite(v), ErrorCode::numerical_failure, "report: " + name + " is not finite");
  }
  require(fid >= 0, ErrorCode::numerical_failure, "report: fid is negative");
  require(clip_similarity >= -1 - 1e-9 && clip_similarity <= 1 + 1e-9, ErrorCode::numerical_failure,
          "report: clip similarity outside [-1, 1]");
  require(vqa_score >= 0 && vqa_score <= 1, ErrorCode::numerical_failure, "report: vqa score outside [0, 1]");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"method", method_label}, {"n_views", n_views},   {"itc", itc},
                      {"clip", clip_similarity}, {"fid", fid},          {"vqa", vqa_score},
                      {"corpus", corpus}};
  if (fixture_delta) j["fixture_delta"] = *fixture_delta;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.method_label = j.value("method", "");
  r.n_views = j.value("n_views", 0);
  r.itc = j.at("itc").get<double>();
  r.clip_similarity = j.at("clip").get<double>();
  r.fid = j.at("fid").get<double>();
  r.vqa_score = j.at("vqa").get<double>();
  r.corpus = j.value("corpus", nlohmann::json::object());
  if (j.contains("fixture_delta")) r.fixture_delta = j.at("fixture_delta").get<std::map<std::string, double>>();
  return r;
}

std::map<std::string, double> fixture_deltas(const EvalReport& report, const Fixtures::Row& row) {
  std::map<std::string, double> out;
  for (const auto& [name, measured] : report.metrics()) {
    const auto it = row.find(name);
    if (it == row.end() || !it->second) continue;
    out[name] = measured - *it->second;
  }
  return out;
}

EvalReport evaluate_bundle(backends::Backends& be, const appearance::AssetBundle& bundle, const Image& reference,
                           const std::string& prompt_text, const EvalOptions& opts) {
  std::vector<Image> views;
  for (std::size_t i = 0; i < bundle.views.size(); ++i) {
    if (!bundle.views[i].empty()) views.push_back(bundle.views[i]);
  }
  require(!views.empty(), ErrorCode::validation, "evaluate_bundle: bundle has no views");
  require(!reference.empty(), ErrorCode::invalid_argument, "evaluate_bundle: empty reference image");

  EvalReport r;
  r.method_label = opts.method_label;
  r.n_views = static_cast<int>(views.size());
  r.itc = tagged("itc", [&] { return itc_score(be, views, prompt_text); });
  r.clip_similarity = tagged("clip", [&] { return clip_similarity(be, views, reference); });
  r.vqa_score = tagged("vqa", [&] { return vqa_score(be, views, prompt_text, opts.vqa_template); });
  const std::vector<Image> refs = {reference, mirror(reference)};
  r.fid = tagged("fid", [&] {
    return fid(image_features(be, views, "eval.fid"), image_features(be, refs, "eval.fid"));
  });
  r.corpus = {{"generated_views", r.n_views},
              {"fid_reference", "reference + horizontal mirror"},
              {"feature_extractor", be.descriptor(backends::BackendKind::embed).model_id},
              {"vqa_question", fill_prompt(opts.vqa_template, prompt_text)}};
  if (opts.fixtures) {
    r.fixture_delta = fixture_deltas(r, opts.fixtures->row(opts.fixture_table, opts.fixture_method));
    r.corpus["fixture"] = {{"table", opts.fixture_table}, {"method", opts.fixture_method}};
  }
  r.validate();
  return r;
}

void append_csv(const std::filesystem::path& csv, const std::string& bundle_id, const EvalReport& report) {
  const bool fresh = !std::filesystem::exists(csv) || std::filesystem::file_size(csv) == 0;
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  std::ofstream out(csv, std::ios::app);
  if (!out) fail(ErrorCode::io, "cannot append to " + csv.string());
  if (fresh) out << "bundle,method,n_views,itc,clip,fid,vqa\n";
  std::string id = bundle_id;
  if (id.find_first_of(",\"\n") != std::string::npos) {
    std::string q = "\"";
    for (char c : id) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    id = q + "\"";
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%s,%d,%.6f,%.6f,%.6f,%.6f\n", report.method_label.c_str(), report.n_views,
                report.itc, report.clip_similarity, report.fid, report.vqa_score);
  out << id << buf;
}

std::size_t csv_rows(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) return 0;
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n == 0 ? 0 : n - 1;
}

}  // namespace vqadiff::eval
