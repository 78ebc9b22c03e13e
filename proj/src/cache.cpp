#include "vqadiff/cache.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "vqadiff/digest.hpp"
#include "vqadiff/error.hpp"

namespace vqadiff {

namespace fs = std::filesystem;

nlohmann::json CacheEntry::to_json() const {
  return {{"stage", stage}, {"key", key}, {"paths", paths}, {"digests", digests}, {"inputs", inputs}};
}

CacheEntry CacheEntry::from_json(const nlohmann::json& j) {
  CacheEntry e;
  e.stage = j.at("stage").get<std::string>();
  e.key = j.at("key").get<std::string>();
  e.paths = j.at("paths").get<std::vector<std::string>>();
  e.digests = j.at("digests").get<std::vector<std::string>>();
  e.inputs = j.value("inputs", nlohmann::json::object());
  require(e.paths.size() == e.digests.size(), ErrorCode::validation, "cache entry paths and digests disagree");
  return e;
}

Cache::Cache(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "entries", ec);
  require(!ec, ErrorCode::io, "cannot create cache at " + root_.string() + ": " + ec.message());
}

fs::path Cache::dir(const std::string& stage, const std::string& key) const { return root_ / stage / key; }

fs::path Cache::entry_path(const std::string& stage, const std::string& key) const {
  return root_ / "entries" / (stage + "-" + key + ".json");
}

std::optional<CacheEntry> Cache::lookup(const std::string& stage, const std::string& key) const {
  const auto p = entry_path(stage, key);
  if (!fs::exists(p)) return std::nullopt;
  CacheEntry e;
  try {
    std::ifstream in(p);
    e = CacheEntry::from_json(nlohmann::json::parse(in));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  for (std::size_t i = 0; i < e.paths.size(); ++i) {
    const auto f = root_ / e.paths[i];
    if (!fs::is_regular_file(f) || file_digest(f) != e.digests[i]) return std::nullopt;
  }
  return e;
}

fs::path Cache::prepare(const std::string& stage, const std::string& key) const {
  const auto d = dir(stage, key);
  std::error_code ec;
  fs::remove(entry_path(stage, key), ec);
  fs::remove_all(d, ec);
  fs::create_directories(d, ec);
  require(!ec, ErrorCode::io, "cannot create " + d.string() + ": " + ec.message());
  return d;
}

CacheEntry Cache::commit(const std::string& stage, const std::string& key, const nlohmann::json& inputs) const {
  CacheEntry e;
  e.stage = stage;
  e.key = key;
  e.inputs = inputs;
  const auto d = dir(stage, key);
  if (fs::is_directory(d)) {
    for (const auto& f : fs::recursive_directory_iterator(d)) {
      if (f.is_regular_file()) e.paths.push_back(f.path().lexically_relative(root_).generic_string());
    }
  }
  std::sort(e.paths.begin(), e.paths.end());
  for (const auto& p : e.paths) e.digests.push_back(file_digest(root_ / p));
  // Write-then-rename so a crash never leaves a half-written entry.
  const auto final_path = entry_path(stage, key);
  const auto tmp = final_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << e.to_json().dump(2) << "\n";
    if (!out) fail(ErrorCode::io, "cannot write cache entry " + tmp);
  }
  fs::rename(tmp, final_path);
  return e;
}

void Cache::discard(const std::string& stage, const std::string& key) const {
  std::error_code ec;
  fs::remove_all(dir(stage, key), ec);
}

std::vector<CacheEntry> Cache::entries() const {
  std::vector<CacheEntry> out;
  for (const auto& f : fs::directory_iterator(root_ / "entries")) {
    if (f.path().extension() != ".json") continue;
    try {
      std::ifstream in(f.path());
      out.push_back(CacheEntry::from_json(nlohmann::json::parse(in)));
    } catch (const std::exception& e) {
      fail(ErrorCode::validation, "corrupt cache entry " + f.path().string() + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.stage + a.key < b.stage + b.key; });
  return out;
}

bool Cache::is_log_file(const fs::path& relative) {
  const auto s = relative.generic_string();
  return s == "trace.jsonl" || s == "aggregate.csv";
}

AuditReport Cache::audit() const {
  AuditReport r;
  std::map<std::string, int> refs;
  const auto all = entries();
  r.entries = all.size();
  for (const auto& e : all) {
    for (std::size_t i = 0; i < e.paths.size(); ++i) {
      ++refs[e.paths[i]];
      const auto f = root_ / e.paths[i];
      if (!fs::is_regular_file(f) || file_digest(f) != e.digests[i]) r.missing.push_back(e.paths[i]);
    }
  }
  for (const auto& [p, n] : refs) {
    if (n > 1) r.shared.push_back(p);
  }
  for (const auto& f : fs::recursive_directory_iterator(root_)) {
    if (!f.is_regular_file()) continue;
    const auto rel = f.path().lexically_relative(root_);
    if (*rel.begin() == "entries" || is_log_file(rel)) continue;
    ++r.files;
    if (!refs.count(rel.generic_string())) r.orphans.push_back(rel.generic_string());
  }
  std::sort(r.orphans.begin(), r.orphans.end());
  return r;
}

}  // namespace vqadiff
