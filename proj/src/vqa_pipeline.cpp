#include "vqadiff/vqa_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <set>

#include "vqadiff/error.hpp"
#include "vqadiff/parallel.hpp"

namespace vqadiff::vqa {

namespace {

nlohmann::json entry_to_json(const TraceEntry& e) {
  return {{"question", e.question}, {"answer", e.answer}, {"score", e.score}, {"round", e.round}};
}

TraceEntry entry_from_json(const nlohmann::json& j) {
  return {j.at("question").get<std::string>(), j.at("answer").get<std::string>(), j.at("score").get<double>(),
          j.value("round", 0)};
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

const std::vector<std::string>& known_manufacturers() {
  static const std::vector<std::string> names = {
      "Alfa Romeo", "Aston Martin", "Land Rover", "Range Rover", "Mercedes-Benz", "Rolls-Royce",
      "Acura", "Audi", "Bentley", "BMW", "Buick", "Cadillac", "Chevrolet", "Chrysler", "Citroen", "Dodge",
      "Ferrari", "Fiat", "Ford", "GMC", "Honda", "Hyundai", "Infiniti", "Jaguar", "Jeep", "Kia",
      "Lamborghini", "Lexus", "Lincoln", "Maserati", "Mazda", "Mercedes", "Mini", "Mitsubishi", "Nissan",
      "Opel", "Peugeot", "Porsche", "Ram", "Renault", "Saab", "Subaru", "Suzuki", "Tesla", "Toyota",
      "Volkswagen", "Volvo"};
  return names;
}

bool iequals_prefix(const std::string& text, std::size_t pos, const std::string& word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[pos + i])) != std::tolower(static_cast<unsigned char>(word[i]))) {
      return false;
    }
  }
  const std::size_t end = pos + word.size();
  return end == text.size() || !std::isalnum(static_cast<unsigned char>(text[end]));
}

struct Candidate {
  std::string question;
  std::string answer;
  double score = 0;
};

double score_answer(backends::Backends& be, const Image& image, const std::string& answer, const RefineOptions& opts,
                    const backends::EmbeddingVector* image_embedding) {
  if (opts.scorer == ScoringMode::txt2txt) {
    const auto a = be.embed_text(answer, "prompt.refine.score");
    const auto c = be.embed_text(*opts.reference_caption, "prompt.refine.caption");
    return backends::cosine(a, c);
  }
  backends::GenerationRequest req;
  req.prompt = answer;
  req.seed = opts.seed;
  req.width = image.width;
  req.height = image.height;
  req.stage = "prompt.refine.feedback";
  const Image feedback = be.generate(backends::BackendKind::text2image, std::move(req));
  return backends::cosine(*image_embedding, be.embed_image(feedback, "prompt.refine.score"));
}

}  // namespace

nlohmann::json VehiclePrompt::to_json() const {
  nlohmann::json trace = nlohmann::json::array(), evals = nlohmann::json::array();
  for (const auto& e : refinement_trace) trace.push_back(entry_to_json(e));
  for (const auto& e : evaluations) evals.push_back(entry_to_json(e));
  return {{"question", question}, {"answer", answer},   {"score", score},
          {"trace", trace},       {"evaluations", evals}, {"warnings", warnings}};
}

VehiclePrompt VehiclePrompt::from_json(const nlohmann::json& j) {
  VehiclePrompt p;
  p.question = j.at("question").get<std::string>();
  p.answer = j.at("answer").get<std::string>();
  p.score = j.value("score", 0.0);
  for (const auto& e : j.value("trace", nlohmann::json::array())) p.refinement_trace.push_back(entry_from_json(e));
  for (const auto& e : j.value("evaluations", nlohmann::json::array())) p.evaluations.push_back(entry_from_json(e));
  p.warnings = j.value("warnings", std::vector<std::string>{});
  return p;
}

QuestionTemplateBank QuestionTemplateBank::defaults() {
  QuestionTemplateBank b;
  b.templates = {
      "What is this image?",
      "What car is it?",
      kCanonicalQuestion,
      "What are the production year and main features of this {manufacturer} {model}?",
      "What are the main body style and features of this {year} {manufacturer} {model}?",
  };
  b.canonical_index = 2;
  return b;
}

QuestionTemplateBank QuestionTemplateBank::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open template bank " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, "template bank " + path.string() + ": " + e.what());
  }
  require(j.is_array(), ErrorCode::invalid_argument, "template bank must be a JSON list of strings");
  QuestionTemplateBank b;
  b.templates = j.get<std::vector<std::string>>();
  const auto it = std::find(b.templates.begin(), b.templates.end(), std::string(kCanonicalQuestion));
  b.canonical_index = it == b.templates.end() ? 0 : static_cast<std::size_t>(it - b.templates.begin());
  b.validate();
  return b;
}

void QuestionTemplateBank::validate() const {
  require(!templates.empty(), ErrorCode::invalid_argument, "question template bank is empty");
  require(canonical_index < templates.size(), ErrorCode::invalid_argument, "canonical index out of range");
  for (const auto& t : templates) require(!trim(t).empty(), ErrorCode::invalid_argument, "empty question template");
}

std::map<std::string, std::string> parse_attributes(const std::string& answer) {
  std::map<std::string, std::string> slots;
  static const std::regex year_re(R"(\b(19[0-9]{2}|20[0-9]{2})\b)");
  if (std::smatch m; std::regex_search(answer, m, year_re)) slots["year"] = m[1];

  const std::string head = answer.substr(0, answer.find(','));
  for (const auto& maker : known_manufacturers()) {
    for (std::size_t pos = 0; pos < head.size(); ++pos) {
      if ((pos == 0 || !std::isalnum(static_cast<unsigned char>(head[pos - 1]))) && iequals_prefix(head, pos, maker)) {
        slots["manufacturer"] = head.substr(pos, maker.size());
        std::string model = trim(head.substr(pos + maker.size()));
        if (!model.empty()) slots["model"] = model;
        break;
      }
    }
    if (slots.count("manufacturer")) break;
  }
  if (const auto comma = answer.find(','); comma != std::string::npos) {
    std::string features = trim(answer.substr(comma + 1));
    if (!features.empty()) slots["features"] = features;
  }
  return slots;
}

std::optional<std::string> instantiate(const std::string& tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close == std::string::npos) {
        out.append(tmpl, i, std::string::npos);
        break;
      }
      const auto name = tmpl.substr(i + 1, close - i - 1);
      const auto it = slots.find(name);
      if (it == slots.end()) return std::nullopt;
      out += it->second;
      i = close + 1;
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

VehiclePrompt extract_description(backends::Backends& be, const Image& image) {
  require(!image.empty(), ErrorCode::invalid_argument, "extract_description: empty image");
  VehiclePrompt p;
  p.question = kCanonicalQuestion;
  p.answer = be.vqa_answer(image, p.question, "prompt.extract");
  if (trim(p.answer).empty()) fail(ErrorCode::empty_answer, "VQA backend returned an empty answer");
  // No scorer runs here; the single trace entry carries the neutral score 0.
  p.score = 0;
  p.refinement_trace.push_back({p.question, p.answer, p.score, 1});
  p.evaluations = p.refinement_trace;
  return p;
}

VehiclePrompt refine_question(backends::Backends& be, const Image& image, const QuestionTemplateBank& bank,
                              const RefineOptions& opts) {
  bank.validate();
  require(opts.max_iters >= 1, ErrorCode::invalid_argument, "refine_question: max_iters must be >= 1");
  require(opts.epsilon >= 0, ErrorCode::invalid_argument, "refine_question: epsilon must be >= 0");
  require(opts.scorer != ScoringMode::txt2txt || (opts.reference_caption && !opts.reference_caption->empty()),
          ErrorCode::invalid_argument, "refine_question: txt2txt scoring needs a reference caption");
  require(!image.empty(), ErrorCode::invalid_argument, "refine_question: empty image");

  std::optional<backends::EmbeddingVector> image_embedding;
  if (opts.scorer == ScoringMode::img2img) image_embedding = be.embed_image(image, "prompt.refine.reference");

  VehiclePrompt best;
  double best_score = -1.0;  // floor of cosine similarity
  bool have_best = false;
  std::set<std::string> asked;

  for (int round = 1; round <= opts.max_iters; ++round) {
    const auto slots = have_best ? parse_attributes(best.answer) : std::map<std::string, std::string>{};
    std::vector<std::string> questions;
    for (const auto& t : bank.templates) {
      auto q = instantiate(t, slots);
      if (q && !asked.count(*q) && std::find(questions.begin(), questions.end(), *q) == questions.end()) {
        questions.push_back(*q);
      }
    }
    if (questions.empty()) break;
    for (const auto& q : questions) asked.insert(q);

    std::vector<Candidate> cands(questions.size());
    bounded_for(questions.size(), opts.max_in_flight, [&](std::size_t i) {
      cands[i].question = questions[i];
      cands[i].answer = be.vqa_answer(image, questions[i], "prompt.refine.ask");
      cands[i].score = trim(cands[i].answer).empty()
                           ? -1.0
                           : score_answer(be, image, cands[i].answer, opts, image_embedding ? &*image_embedding : nullptr);
    });

    const double before = best_score;
    for (const auto& c : cands) {
      best.evaluations.push_back({c.question, c.answer, c.score, round});
      if (!trim(c.answer).empty() && (!have_best || c.score > best_score)) {
        best_score = c.score;
        have_best = true;
        best.question = c.question;
        best.answer = c.answer;
        best.refinement_trace.push_back({c.question, c.answer, c.score, round});
      }
    }
    if (best_score - before < opts.epsilon) break;
  }

  if (!have_best) fail(ErrorCode::empty_answer, "refine_question: every candidate answer was empty");
  best.score = best_score;
  return best;
}

Image apply_mask(const Image& image, const Image& mask) {
  require(mask.width == image.width && mask.height == image.height && mask.channels == 1, ErrorCode::invalid_argument,
          "apply_mask: mask resolution differs from image");
  Image out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (!mask.at(x, y)) {
        for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = 0;
      }
    }
  }
  return out;
}

SubjectEmbedding subject_embedding(backends::Backends& be, const Image& image, const VehiclePrompt& prompt) {
  require(!trim(prompt.answer).empty(), ErrorCode::invalid_argument, "subject_embedding: prompt answer is empty");
  SubjectEmbedding out;
  backends::CallSummary seg_call, emb_call;
  const auto seg = be.segment_foreground(image, "subject.segment", &seg_call);
  out.calls.push_back(seg_call);
  const Image* source = &image;
  Image masked;
  if (seg.empty) {
    out.degraded_mask = true;
  } else {
    masked = apply_mask(image, seg.mask);
    source = &masked;
  }
  out.vector = be.embed_multimodal(*source, prompt.answer, "subject.embed", &emb_call);
  out.calls.push_back(emb_call);
  return out;
}

}  // namespace vqadiff::vqa
