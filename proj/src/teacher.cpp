#include "densetune/teacher.hpp"

#include <algorithm>
#include <cmath>

#include "densetune/error.hpp"
#include "densetune/io.hpp"
#include "densetune/rng.hpp"

namespace densetune::teacher {

std::string ScoreTable::key(std::string_view query_id, std::string_view passage_id) {
  std::string k;
  k.reserve(query_id.size() + passage_id.size() + 1);
  k.append(query_id);
  k.push_back('\x1f');
  k.append(passage_id);
  return k;
}

void ScoreTable::add(std::string query_id, std::string passage_id, double score) {
  if (!std::isfinite(score)) {
    throw DataError("non-finite teacher score for (" + query_id + ", " + passage_id + ")");
  }
  auto k = key(query_id, passage_id);
  if (index_.contains(k)) {
    throw DataError("duplicate teacher score for (" + query_id + ", " + passage_id + ")");
  }
  index_.emplace(std::move(k), entries_.size());
  entries_.push_back(ScoreEntry{std::move(query_id), std::move(passage_id), score});
}

std::optional<double> ScoreTable::find(std::string_view query_id, std::string_view passage_id) const {
  auto it = index_.find(key(query_id, passage_id));
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].score;
}

double ScoreTable::at(std::string_view query_id, std::string_view passage_id) const {
  auto s = find(query_id, passage_id);
  if (!s) {
    throw DataError("missing teacher score for (" + std::string(query_id) + ", " + std::string(passage_id) + ")");
  }
  return *s;
}

double percentile_inclusive(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DataError("percentile of an empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lower = static_cast<std::size_t>(std::floor(h));
  if (lower + 1 >= sorted.size()) return sorted.back();
  return sorted[lower] + (h - static_cast<double>(lower)) * (sorted[lower + 1] - sorted[lower]);
}

NormalizedScoreTable normalize_scores(const RawScoreTable& raw) {
  std::vector<double> pooled;
  pooled.reserve(raw.size());
  for (const auto& e : raw.entries()) pooled.push_back(e.score);
  if (pooled.size() < 2) throw NumericError("degenerate teacher: fewer than two scores");
  std::sort(pooled.begin(), pooled.end());

  NormalizedScoreTable out;
  out.lo = percentile_inclusive(pooled, 0.01);
  out.hi = percentile_inclusive(pooled, 0.99);
  if (!(out.hi > out.lo)) {
    throw NumericError("degenerate teacher: 1st and 99th percentiles coincide at " + std::to_string(out.lo));
  }
  const double span = out.hi - out.lo;
  for (const auto& e : raw.entries()) {
    out.scores.add(e.query_id, e.passage_id, std::clamp((e.score - out.lo) / span, 0.0, 1.0));
  }
  return out;
}

RawScoreTable oracle_teacher(const eval::Qrels& ground_truth, std::uint64_t noise_seed, double noise_sd) {
  if (ground_truth.empty()) throw DataError("oracle_teacher: empty qrels");
  if (!(noise_sd >= 0.0)) throw UsageError("oracle_teacher: noise_sd must be non-negative");
  SplitMix64 rng(noise_seed);
  RawScoreTable table;
  for (const auto& [qid, judged] : ground_truth.queries()) {
    for (const auto& [pid, grade] : judged) {
      double score = static_cast<double>(grade);
      if (noise_sd > 0.0) score += noise_sd * rng.normal();
      table.add(qid, pid, score);
    }
  }
  return table;
}

namespace {

json entry_json(const ScoreEntry& e) {
  return json{{"query_id", e.query_id}, {"passage_id", e.passage_id}, {"score", e.score}};
}

}  // namespace

RawScoreTable load_raw_scores(const std::filesystem::path& path) {
  RawScoreTable table;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    if (obj.contains("lo") && !obj.contains("query_id")) return;  // tolerate a normalized header
    table.add(require_string(obj, "query_id", line), require_string(obj, "passage_id", line),
              require_number(obj, "score", line));
  });
  return table;
}

void write_raw_scores(const std::filesystem::path& path, const RawScoreTable& table) {
  auto out = open_output(path);
  for (const auto& e : table.entries()) out << dump_line(entry_json(e)) << '\n';
}

NormalizedScoreTable load_normalized_scores(const std::filesystem::path& path) {
  NormalizedScoreTable table;
  bool have_header = false;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    if (!have_header) {
      table.lo = require_number(obj, "lo", line);
      table.hi = require_number(obj, "hi", line);
      have_header = true;
      return;
    }
    const double score = require_number(obj, "score", line);
    if (score < 0.0 || score > 1.0) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": normalized score outside [0, 1]");
    }
    table.scores.add(require_string(obj, "query_id", line), require_string(obj, "passage_id", line), score);
  });
  if (!have_header) throw DataError(path.string() + ": missing {\"lo\", \"hi\"} header");
  return table;
}

void write_normalized_scores(const std::filesystem::path& path, const NormalizedScoreTable& table) {
  auto out = open_output(path);
  out << dump_line(json{{"lo", table.lo}, {"hi", table.hi}}) << '\n';
  for (const auto& e : table.scores.entries()) out << dump_line(entry_json(e)) << '\n';
}

}  // namespace densetune::teacher
