#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "densetune/exec.hpp"

namespace densetune::corpus {

/// Lowercases (simple Unicode case mapping), drops every code point in the
/// Unicode punctuation (P*) and symbol (S*) categories, collapses whitespace
/// runs to one ASCII space, and trims. Invalid UTF-8 bytes are dropped.
/// Total, deterministic, idempotent.
std::string normalize_text(std::string_view raw);

struct Passage {
  std::string id;
  std::string text;
  std::string norm_text;
};

/// Ordered passage collection with an id index. Ids are unique and non-empty.
class Corpus {
 public:
  /// Normalizes `text`; raises DataError on an empty or duplicate id.
  void add(std::string id, std::string text);

  std::span<const Passage> passages() const { return passages_; }
  std::size_t size() const { return passages_.size(); }
  bool empty() const { return passages_.empty(); }
  const Passage& operator[](std::size_t i) const { return passages_[i]; }
  std::optional<std::size_t> find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Removal {
  std::string removed;
  std::string kept_superstring;
};

struct DedupResult {
  Corpus corpus;
  std::vector<Removal> removed;
};

/// Removes every passage whose normalized text occurs inside another
/// passage's normalized text. Among exact duplicates the earliest survives.
/// Each removal is attributed to the longest containing passage, earliest on
/// ties, which is always a survivor.
///
/// Built on a suffix array over all normalized texts joined by a separator
/// symbol outside the byte alphabet; containment queries run in parallel.
DedupResult dedup_corpus(const Corpus& corpus, Exec exec = Exec::parallel);

/// JSON-Lines {"id", "text"}.
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
/// JSON-Lines {"removed", "kept_superstring"}.
void write_removals(const std::filesystem::path& path, std::span<const Removal> removed);
std::vector<Removal> load_removals(const std::filesystem::path& path);

}  // namespace densetune::corpus
