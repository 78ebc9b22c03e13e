#include "vqadiff/stub_backends.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>

#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"

namespace vqadiff::backends {

// ---------------------------------------------------------------------------
// VQA

VqaFixtures VqaFixtures::defaults() {
  VqaFixtures f;
  f.answers[{"*", "What is this image?"}] = "a car";
  f.answers[{"*", "What car is it?"}] = "an suv";
  f.pool = {
      "2014 Dodge Ram 1500, a full-size pick-up truck with a crew cab, chrome grille and a short bed",
      "2017 Tesla Model 3, a compact electric sedan with a glass roof and flush door handles",
      "2012 Range Rover Evoque, a compact luxury SUV in dark orange with a tapered roofline",
      "2015 BMW X5, a mid-size luxury SUV with kidney grille and roof rails",
      "2010 Toyota Prius, a hybrid hatchback with an aerodynamic wedge profile",
      "2019 Ford F-150, a full-size pick-up truck with a raised suspension and running boards",
      "2016 Volkswagen Golf, a compact hatchback with five doors and alloy wheels",
      "2013 Honda Accord, a mid-size sedan with chrome trim and a sloping rear window",
  };
  return f;
}

VqaFixtures VqaFixtures::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open VQA fixtures " + path.string());
  const auto j = nlohmann::json::parse(in);
  VqaFixtures f;
  for (const auto& e : j.value("answers", nlohmann::json::array())) {
    f.answers[{e.value("image_digest", "*"), e.at("question").get<std::string>()}] = e.at("answer").get<std::string>();
  }
  f.pool = j.value("pool", std::vector<std::string>{});
  if (j.contains("yes_probability")) f.yes_probability = j.at("yes_probability").get<double>();
  if (f.pool.empty()) f.pool = defaults().pool;
  return f;
}

nlohmann::json VqaFixtures::to_json() const {
  nlohmann::json answers_json = nlohmann::json::array();
  for (const auto& [key, answer] : answers) {
    answers_json.push_back({{"image_digest", key.first}, {"question", key.second}, {"answer", answer}});
  }
  nlohmann::json j = {{"answers", answers_json}, {"pool", pool}};
  if (yes_probability) j["yes_probability"] = *yes_probability;
  return j;
}

StubVqa::StubVqa(VqaFixtures fixtures) : fixtures_(std::move(fixtures)) {
  require(!fixtures_.pool.empty(), ErrorCode::invalid_argument, "stub VQA: fixture pool must not be empty");
}

std::string StubVqa::answer(const Image& image, const std::string& question) {
  require(!question.empty(), ErrorCode::invalid_argument, "vqa: question must not be empty");
  const auto digest = image_digest(image);
  if (auto it = fixtures_.answers.find({digest, question}); it != fixtures_.answers.end()) return it->second;
  if (auto it = fixtures_.answers.find({"*", question}); it != fixtures_.answers.end()) return it->second;
  return fixtures_.pool[hash64(digest + "\n" + question) % fixtures_.pool.size()];
}

double StubVqa::yes_probability(const Image& image, const std::string& question) {
  require(!question.empty(), ErrorCode::invalid_argument, "vqa: question must not be empty");
  if (fixtures_.yes_probability) return *fixtures_.yes_probability;
  return unit_double(hash64(image_digest(image) + "\nyes\n" + question));
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct Rgb {
  double r, g, b;
};

std::uint64_t request_key(BackendKind kind, const std::string& model_id, const GenerationRequest& req) {
  std::uint64_t k = mix64(hash64(model_id), static_cast<std::uint64_t>(kind));
  k = mix64(k, req.seed);
  k = mix64(k, hash64(req.prompt));
  k = mix64(k, static_cast<std::uint64_t>(req.steps));
  k = mix64(k, std::bit_cast<std::uint64_t>(req.guidance));
  if (req.init_image) k = mix64(k, hash64(image_digest(*req.init_image)));
  if (req.condition_image) k = mix64(k, hash64(image_digest(*req.condition_image)));
  if (req.subject_embedding) {
    const auto& v = *req.subject_embedding;
    k = mix64(k, hash64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()),
                                                      v.size() * sizeof(double))));
  }
  return k;
}

double value_noise(std::uint64_t key, double x, double y, int channel) {
  const int cx = static_cast<int>(std::floor(x)), cy = static_cast<int>(std::floor(y));
  const double fx = x - cx, fy = y - cy;
  auto lattice = [&](int ix, int iy) {
    const std::uint64_t h = mix64(key, (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) << 32) ^
                                           static_cast<std::uint32_t>(iy) ^ (std::uint64_t(channel) << 61));
    return unit_double(h);
  };
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double a = lattice(cx, cy) + sx * (lattice(cx + 1, cy) - lattice(cx, cy));
  const double b = lattice(cx, cy + 1) + sx * (lattice(cx + 1, cy + 1) - lattice(cx, cy + 1));
  return a + sy * (b - a);
}

// Flat-shaded side-view vehicle silhouette inside one tile. `phase` in [0,1)
// stands in for the azimuth so tiles of a grid look like different views.
void draw_vehicle(Image& img, int x0, int y0, int size, const Rgb& body, double phase, double jitter) {
  const double span = 0.22 + 0.16 * std::abs(std::cos(2 * std::numbers::pi * phase));
  const double cx = 0.5 + jitter;
  const double body_l = cx - span, body_r = cx + span;
  const double cabin_l = cx - 0.6 * span, cabin_r = cx + 0.45 * span;
  const double wheel_r = 0.085;
  const double wheel_y = 0.70;
  const double wheel_lx = cx - 0.62 * span, wheel_rx = cx + 0.62 * span;
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const double u = (px + 0.5) / size, v = (py + 0.5) / size;
      const bool in_body = u >= body_l && u <= body_r && v >= 0.50 && v <= 0.70;
      const bool in_cabin = u >= cabin_l && u <= cabin_r && v >= 0.36 && v < 0.50;
      const double dl = std::hypot(u - wheel_lx, v - wheel_y), dr = std::hypot(u - wheel_rx, v - wheel_y);
      const bool in_wheel = dl <= wheel_r || dr <= wheel_r;
      if (!(in_body || in_cabin || in_wheel)) continue;
      Rgb c = body;
      if (in_wheel) c = {28, 28, 30};
      else if (in_cabin) c = {0.55 * body.r + 60, 0.55 * body.g + 70, 0.55 * body.b + 90};
      auto& r = img.at(x0 + px, y0 + py, 0);
      auto& g = img.at(x0 + px, y0 + py, 1);
      auto& b = img.at(x0 + px, y0 + py, 2);
      r = static_cast<std::uint8_t>(std::clamp(c.r, 0.0, 255.0));
      g = static_cast<std::uint8_t>(std::clamp(c.g, 0.0, 255.0));
      b = static_cast<std::uint8_t>(std::clamp(c.b, 0.0, 255.0));
    }
  }
}

std::uint8_t sample_nearest(const Image& src, int x, int y, int w, int h, int c) {
  const int sx = std::min(src.width - 1, x * src.width / w);
  const int sy = std::min(src.height - 1, y * src.height / h);
  return src.at(sx, sy, src.channels == 1 ? 0 : c);
}

}  // namespace

StubGeneration::StubGeneration(BackendKind kind, std::string model_id, StubGenerationOptions opts)
    : kind_(kind), model_id_(std::move(model_id)), opts_(opts) {}

Image StubGeneration::generate(const GenerationRequest& req) {
  validate_request(kind_, req);
  const std::uint64_t key = request_key(kind_, model_id_, req);
  const int w = req.width, h = req.height;
  Image out(w, h, 3);

  const double cell = std::max(8.0, std::min(w, h) / 6.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(150 + 90 * value_noise(key, x / cell, y / cell, c));
      }
    }
  }

  const std::uint64_t ph = hash64(req.prompt);
  const Rgb body{40.0 + (ph & 0xff) * 0.7, 40.0 + ((ph >> 8) & 0xff) * 0.7, 40.0 + ((ph >> 16) & 0xff) * 0.7};
  const int k = (w == h && w >= 512 && w % 256 == 0) ? w / 256 : 1;
  const int tile = w / k;
  for (int t = 0; t < k * k; ++t) {
    const double jitter = (unit_double(mix64(key, 1000 + t)) - 0.5) * 0.06;
    draw_vehicle(out, (t % k) * tile, (t / k) * tile, tile, body, static_cast<double>(t) / (k * k), jitter);
  }

  if (kind_ == BackendKind::image2image) {
    const Image& init = *req.init_image;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          out.at(x, y, c) = static_cast<std::uint8_t>((out.at(x, y, c) + sample_nearest(init, x, y, w, h, c) + 1) / 2);
        }
      }
    }
    if (opts_.echo_init && init.width * 2 == w && init.height * 2 == h) {
      const Image rgb = to_rgb(init);
      for (int y = 0; y < init.height; ++y) {
        std::copy(rgb.row(y).begin(), rgb.row(y).end(), &out.at(0, y));
      }
    }
  } else if (kind_ == BackendKind::edge2image) {
    const Image& cond = *req.condition_image;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (sample_nearest(cond, x, y, w, h, 0) > 127) {
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<std::uint8_t>(out.at(x, y, c) * 2 / 5);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding

namespace {

constexpr int kPool = 8;
constexpr int kFeatures = kPool * kPool * 3;

std::vector<double> image_features(const Image& img) {
  require(!img.empty(), ErrorCode::invalid_argument, "embed: empty image");
  std::vector<double> f(kFeatures, 0.0);
  for (int cy = 0; cy < kPool; ++cy) {
    const int y0 = cy * img.height / kPool, y1 = std::max(y0 + 1, (cy + 1) * img.height / kPool);
    for (int cx = 0; cx < kPool; ++cx) {
      const int x0 = cx * img.width / kPool, x1 = std::max(x0 + 1, (cx + 1) * img.width / kPool);
      for (int c = 0; c < 3; ++c) {
        double sum = 0;
        int n = 0;
        for (int y = y0; y < std::min(y1, img.height); ++y) {
          for (int x = x0; x < std::min(x1, img.width); ++x) {
            sum += img.at(x, y, img.channels == 1 ? 0 : c);
            ++n;
          }
        }
        f[static_cast<std::size_t>((cy * kPool + cx) * 3 + c)] = n ? sum / n / 127.5 - 1.0 : 0.0;
      }
    }
  }
  return f;
}

std::vector<double> text_features(const std::string& text) {
  require(!text.empty(), ErrorCode::invalid_argument, "embed: empty text");
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::vector<double> f(kFeatures, 0.0);
  auto bump = [&](const std::string& token, double weight) {
    const auto h = hash64(token);
    f[h % kFeatures] += ((h >> 63) ? -weight : weight);
  };
  std::string word;
  for (char c : lower + " ") {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word.push_back(c);
    } else if (!word.empty()) {
      bump("w:" + word, 1.0);
      word.clear();
    }
  }
  const std::string padded = " " + lower + " ";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) bump("t:" + padded.substr(i, 3), 0.5);
  return f;
}

std::vector<double> safe_normalized(std::vector<double> v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  if (!(n2 > 0)) {
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = 1.0;
    return v;
  }
  return normalized(std::move(v));
}

}  // namespace

StubEmbedding::StubEmbedding(std::string model_id, int dim) : model_id_(std::move(model_id)), dim_(dim) {
  require(dim_ >= 2, ErrorCode::invalid_argument, "stub embedding: dim must be >= 2");
  key_ = hash64(model_id_);
}

std::vector<double> StubEmbedding::project(const std::vector<double>& features, std::uint64_t salt) const {
  std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
  const std::uint64_t k = mix64(key_, salt);
  for (int j = 0; j < dim_; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i] == 0.0) continue;
      acc += (2.0 * unit_double(mix64(k, static_cast<std::uint64_t>(j) * kFeatures + i)) - 1.0) * features[i];
    }
    out[static_cast<std::size_t>(j)] = acc;
  }
  return safe_normalized(std::move(out));
}

EmbeddingVector StubEmbedding::embed_image(const Image& image) {
  return {project(image_features(image), 1), Modality::image};
}

EmbeddingVector StubEmbedding::embed_text(const std::string& text) {
  return {project(text_features(text), 2), Modality::text};
}

EmbeddingVector StubEmbedding::embed_multimodal(const Image& image, const std::string& text) {
  auto a = embed_image(image).values;
  const auto b = embed_text(text).values;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return {safe_normalized(std::move(a)), Modality::multimodal};
}

// ---------------------------------------------------------------------------
// Segmentation

SegmentationResult StubSegmentation::segment_foreground(const Image& image) {
  require(!image.empty(), ErrorCode::invalid_argument, "segment: empty image");
  const int w = image.width, h = image.height;
  auto color = [&](int x, int y) {
    std::uint32_t v = 0;
    for (int c = 0; c < image.channels; ++c) v = (v << 8) | image.at(x, y, c);
    return v;
  };

  std::map<std::uint32_t, int> border;
  for (int x = 0; x < w; ++x) {
    ++border[color(x, 0)];
    ++border[color(x, h - 1)];
  }
  for (int y = 0; y < h; ++y) {
    ++border[color(0, y)];
    ++border[color(w - 1, y)];
  }
  std::uint32_t background = border.begin()->first;
  int best = -1;
  for (const auto& [c, n] : border) {
    if (n > best) {
      best = n;
      background = c;
    }
  }

  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  int best_label = -1;
  std::size_t best_size = 0;
  std::vector<int> stack;
  int next = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (label[i] >= 0 || color(x, y) == background) continue;
      const int id = next++;
      std::size_t size = 0;
      label[i] = id;
      stack.push_back(static_cast<int>(i));
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++size;
        const int cx = cur % w, cy = cur / w;
        const int nbr[4][2] = {{cx - 1, cy}, {cx + 1, cy}, {cx, cy - 1}, {cx, cy + 1}};
        for (const auto& n : nbr) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
          const std::size_t j = static_cast<std::size_t>(n[1]) * w + n[0];
          if (label[j] < 0 && color(n[0], n[1]) != background) {
            label[j] = id;
            stack.push_back(static_cast<int>(j));
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best_label = id;
      }
    }
  }

  SegmentationResult r;
  r.mask = Image(w, h, 1, 0);
  r.empty = best_label < 0;
  if (!r.empty) {
    for (std::size_t i = 0; i < label.size(); ++i) r.mask.pixels[i] = label[i] == best_label ? 1 : 0;
  }
  return r;
}

}  // namespace vqadiff::backends
