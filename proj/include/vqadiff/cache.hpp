#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace vqadiff {

// Stage outputs live in <root>/<stage>/<key>/; the entry recording them lives
// in <root>/entries/<stage>-<key>.json. Keys are digests of stage inputs.
struct CacheEntry {
  std::string stage;
  std::string key;
  std::vector<std::string> paths;    // relative to the cache root, sorted
  std::vector<std::string> digests;  // file digest per path
  nlohmann::json inputs = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CacheEntry from_json(const nlohmann::json& j);
};

struct AuditReport {
  std::vector<std::string> orphans;   // files no entry references
  std::vector<std::string> missing;   // referenced but absent or modified
  std::vector<std::string> shared;    // referenced by more than one entry
  std::size_t entries = 0;
  std::size_t files = 0;

  bool ok() const { return orphans.empty() && missing.empty() && shared.empty(); }
};

class Cache {
 public:
  explicit Cache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path dir(const std::string& stage, const std::string& key) const;

  // Hit only when the entry exists and every recorded file still matches its digest.
  std::optional<CacheEntry> lookup(const std::string& stage, const std::string& key) const;

  // Clears any leftovers from an interrupted run and returns an empty stage directory.
  std::filesystem::path prepare(const std::string& stage, const std::string& key) const;

  // Records every file currently under dir(stage, key).
  CacheEntry commit(const std::string& stage, const std::string& key, const nlohmann::json& inputs) const;

  // Removes an uncommitted stage directory.
  void discard(const std::string& stage, const std::string& key) const;

  std::vector<CacheEntry> entries() const;
  AuditReport audit() const;

  // Files in the root that are logs rather than stage outputs.
  static bool is_log_file(const std::filesystem::path& relative);

 private:
  std::filesystem::path entry_path(const std::string& stage, const std::string& key) const;
  std::filesystem::path root_;
};

}  // namespace vqadiff
