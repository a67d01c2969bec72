#include "densetune/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "densetune/error.hpp"

namespace densetune::eval {

void Qrels::add(const std::string& query_id, const std::string& passage_id, int grade) {
  if (grade < 0) {
    throw DataError("negative relevance grade for (" + query_id + ", " + passage_id + ")");
  }
  auto& judged = queries_[query_id];
  if (!judged.emplace(passage_id, grade).second) {
    throw DataError("duplicate judgment for (" + query_id + ", " + passage_id + ")");
  }
  ++size_;
}

int Qrels::grade(std::string_view query_id, std::string_view passage_id) const {
  auto q = queries_.find(query_id);
  if (q == queries_.end()) return 0;
  auto p = q->second.find(passage_id);
  return p == q->second.end() ? 0 : p->second;
}

std::size_t Qrels::relevant_count(std::string_view query_id) const {
  auto q = queries_.find(query_id);
  if (q == queries_.end()) return 0;
  return static_cast<std::size_t>(
      std::count_if(q->second.begin(), q->second.end(), [](const auto& kv) { return kv.second >= 1; }));
}

void RunFile::set(const std::string& query_id, std::vector<RunEntry> ranked) {
  if (ranked.size() > kMaxRunDepth) {
    throw DataError("run for query " + query_id + " exceeds " + std::to_string(kMaxRunDepth) + " entries");
  }
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!seen.insert(ranked[i].passage_id).second) {
      throw DataError("run for query " + query_id + " repeats passage " + ranked[i].passage_id);
    }
    if (i > 0 && ranked[i].score > ranked[i - 1].score) {
      throw DataError("run for query " + query_id + " has increasing scores at rank " + std::to_string(i + 1));
    }
  }
  if (!queries_.emplace(query_id, std::move(ranked)).second) {
    throw DataError("duplicate run for query " + query_id);
  }
}

const std::vector<RunEntry>* RunFile::find(std::string_view query_id) const {
  auto it = queries_.find(query_id);
  return it == queries_.end() ? nullptr : &it->second;
}

RunFile run_from_retrieval(std::span<const embeddings::RetrievalResult> results, std::string tag) {
  RunFile run(std::move(tag));
  for (const auto& r : results) {
    std::vector<RunEntry> ranked;
    ranked.reserve(r.ranked.size());
    for (const auto& hit : r.ranked) ranked.push_back(RunEntry{hit.passage_id, hit.score});
    run.set(r.query_id, std::move(ranked));
  }
  return run;
}

namespace {

/// Shared driver: scores every judged query with `score_fn(judgments, ranked)`.
/// `has_signal(judgments)` decides whether the query enters the mean.
template <typename ScoreFn, typename SignalFn>
MetricResult per_query_metric(const RunFile& run, const Qrels& qrels, ScoreFn score_fn, SignalFn has_signal) {
  static const std::vector<RunEntry> kEmpty;
  MetricResult result;
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& [qid, judged] : qrels.queries()) {
    if (!has_signal(judged)) {
      result.excluded.push_back(qid);
      continue;
    }
    const auto* ranked = run.find(qid);
    if (!ranked) {
      result.missing.push_back(qid);
      ranked = &kEmpty;
    }
    const double value = score_fn(judged, *ranked);
    result.per_query.emplace(qid, value);
    total += value;
    ++counted;
  }
  result.mean = counted ? total / static_cast<double>(counted) : 0.0;
  return result;
}

int grade_of(const Qrels::Judgments& judged, const std::string& passage_id) {
  auto it = judged.find(passage_id);
  return it == judged.end() ? 0 : it->second;
}

bool any_relevant(const Qrels::Judgments& judged) {
  return std::any_of(judged.begin(), judged.end(), [](const auto& kv) { return kv.second >= 1; });
}

std::size_t count_relevant(const Qrels::Judgments& judged) {
  return static_cast<std::size_t>(
      std::count_if(judged.begin(), judged.end(), [](const auto& kv) { return kv.second >= 1; }));
}

double gain(int grade) { return std::exp2(static_cast<double>(grade)) - 1.0; }

}  // namespace

MetricResult ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw UsageError("ndcg_at_k: k must be at least 1");
  auto score = [k](const Qrels::Judgments& judged, const std::vector<RunEntry>& ranked) {
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      dcg += gain(grade_of(judged, ranked[r].passage_id)) / std::log2(static_cast<double>(r) + 2.0);
    }
    std::vector<int> ideal;
    for (const auto& [pid, g] : judged) ideal.push_back(g);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) {
      idcg += gain(ideal[r]) / std::log2(static_cast<double>(r) + 2.0);
    }
    return dcg / idcg;
  };
  return per_query_metric(run, qrels, score, any_relevant);
}

MetricResult recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw UsageError("recall_at_k: k must be at least 1");
  auto score = [k](const Qrels::Judgments& judged, const std::vector<RunEntry>& ranked) {
    std::size_t found = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      if (grade_of(judged, ranked[r].passage_id) >= 1) ++found;
    }
    return static_cast<double>(found) / static_cast<double>(count_relevant(judged));
  };
  return per_query_metric(run, qrels, score, any_relevant);
}

MetricResult map_metric(const RunFile& run, const Qrels& qrels) {
  auto score = [](const Qrels::Judgments& judged, const std::vector<RunEntry>& ranked) {
    std::size_t hits = 0;
    double sum_precision = 0.0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (grade_of(judged, ranked[r].passage_id) >= 1) {
        ++hits;
        sum_precision += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    return sum_precision / static_cast<double>(count_relevant(judged));
  };
  return per_query_metric(run, qrels, score, any_relevant);
}

RunFile rerank_run(const RunFile& run, const teacher::ScoreTable& teacher, std::size_t depth) {
  RunFile out(run.tag());
  for (const auto& [qid, ranked] : run.queries()) {
    const std::size_t block = std::min(depth, ranked.size());
    std::vector<RunEntry> reranked;
    reranked.reserve(ranked.size());
    for (std::size_t i = 0; i < block; ++i) {
      reranked.push_back(RunEntry{ranked[i].passage_id, teacher.at(qid, ranked[i].passage_id)});
    }
    std::sort(reranked.begin(), reranked.end(), [](const RunEntry& a, const RunEntry& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.passage_id < b.passage_id;
    });
    const double floor = reranked.empty() ? 0.0 : reranked.back().score;
    for (std::size_t i = block; i < ranked.size(); ++i) {
      reranked.push_back(RunEntry{ranked[i].passage_id, floor - static_cast<double>(i - block + 1)});
    }
    out.set(qid, std::move(reranked));
  }
  return out;
}

MetricsSummary evaluate_run(const RunFile& run, const Qrels& qrels) {
  return MetricsSummary{ndcg_at_k(run, qrels, 10), recall_at_k(run, qrels, 100), map_metric(run, qrels)};
}

namespace {

json metric_json(const MetricResult& m) {
  json per_query = json::object();
  for (const auto& [qid, v] : m.per_query) per_query[qid] = v;
  return json{{"per_query", per_query}, {"mean", m.mean}, {"missing", m.missing}, {"excluded", m.excluded}};
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> fields;
  std::string f;
  while (in >> f) fields.push_back(f);
  return fields;
}

}  // namespace

json metrics_to_json(const MetricsSummary& summary) {
  return json{{"ndcg@10", metric_json(summary.ndcg10)},
              {"recall@100", metric_json(summary.recall100)},
              {"map", metric_json(summary.map)}};
}

Qrels load_qrels(const std::filesystem::path& path) {
  auto in = open_input(path);
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 4) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected \"qid 0 docid grade\"");
    }
    int grade = 0;
    try {
      std::size_t used = 0;
      grade = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad grade \"" + f[3] + "\"");
    }
    qrels.add(f[0], f[2], grade);
  }
  return qrels;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  auto out = open_output(path);
  for (const auto& [qid, judged] : qrels.queries()) {
    for (const auto& [pid, grade] : judged) out << qid << " 0 " << pid << ' ' << grade << '\n';
  }
}

RunFile load_run(const std::filesystem::path& path) {
  auto in = open_input(path);
  struct Line {
    std::string pid;
    long rank;
    double score;
    std::size_t order;
  };
  std::map<std::string, std::vector<Line>> grouped;
  std::string tag;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 6) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected \"qid Q0 docid rank score tag\"");
    }
    try {
      grouped[f[0]].push_back(Line{f[2], std::stol(f[3]), std::stod(f[4]), line_no});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad rank or score");
    }
    if (tag.empty()) tag = f[5];
  }
  RunFile run(tag.empty() ? "densetune" : tag);
  for (auto& [qid, lines] : grouped) {
    std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.rank < b.rank; });
    std::vector<RunEntry> ranked;
    ranked.reserve(lines.size());
    for (const auto& l : lines) ranked.push_back(RunEntry{l.pid, l.score});
    run.set(qid, std::move(ranked));
  }
  return run;
}

void write_run(const std::filesystem::path& path, const RunFile& run) {
  auto out = open_output(path);
  char score[64];
  for (const auto& [qid, ranked] : run.queries()) {
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      std::snprintf(score, sizeof(score), "%.6f", ranked[r].score);
      out << qid << " Q0 " << ranked[r].passage_id << ' ' << (r + 1) << ' ' << score << ' ' << run.tag() << '\n';
    }
  }
}

}  // namespace densetune::eval
