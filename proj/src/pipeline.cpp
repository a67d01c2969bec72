#include "densetune/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "densetune/adapter.hpp"
#include "densetune/corpus.hpp"
#include "densetune/embeddings.hpp"
#include "densetune/error.hpp"
#include "densetune/eval.hpp"
#include "densetune/querygen.hpp"
#include "densetune/sweep.hpp"
#include "densetune/teacher.hpp"

namespace densetune::pipeline {
namespace fs = std::filesystem;

namespace {

struct PathField {
  const char* name;
  fs::path Paths::*member;
};

constexpr PathField kPathFields[] = {
    {"corpus", &Paths::corpus},
    {"queries", &Paths::queries},
    {"passage_embeddings", &Paths::passage_embeddings},
    {"query_embeddings", &Paths::query_embeddings},
    {"teacher_scores", &Paths::teacher_scores},
    {"qrels", &Paths::qrels},
    {"eval_teacher_scores", &Paths::eval_teacher_scores},
    {"work_dir", &Paths::work_dir},
};

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!obj.is_object()) throw UsageError(section + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw UsageError("unknown config key " + section + "." + key);
    }
  }
}

std::string env_name(std::string_view field) {
  std::string out = "DENSETUNE_";
  for (char c : field) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

json mining_to_json(const negatives::MiningConfig& m) {
  return json{{"K", m.K}, {"threshold_fraction", m.threshold_fraction}, {"mining_depth", m.mining_depth}};
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& section) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError("config key " + section + "." + key + " has the wrong type");
  }
}

// Paths, hashes, and the manifest of one stage run.
class StageRun {
 public:
  StageRun(Stage stage, const PipelineConfig& cfg) : stage_(stage), cfg_(cfg) {}

  /// Validates existence before anything is read.
  fs::path input(const fs::path& path, const char* what) {
    if (path.empty()) throw UsageError(std::string("paths.") + what + " is not set");
    if (!fs::exists(path)) throw UsageError(std::string("missing input ") + what + ": " + path.string());
    inputs_.push_back(path);
    return path;
  }
  fs::path work_input(const char* name) {
    const auto path = cfg_.paths.work_dir / name;
    if (!fs::exists(path)) {
      throw UsageError("missing stage input " + path.string() + " (run the stage that produces it first)");
    }
    inputs_.push_back(path);
    return path;
  }
  fs::path output(const char* name) {
    const auto path = cfg_.paths.work_dir / name;
    outputs_.push_back(path);
    return path;
  }

  void finish() const {
    json manifest{{"stage", std::string(to_string(stage_))},
                  {"version", kVersion},
                  {"seed", cfg_.seed},
                  {"config_sha256", sha256_string(to_json(cfg_).dump())}};
    json in = json::object(), out = json::object();
    for (const auto& p : inputs_) in[p.string()] = sha256_file(p);
    for (const auto& p : outputs_) out[p.string()] = sha256_file(p);
    manifest["inputs"] = std::move(in);
    manifest["outputs"] = std::move(out);
    write_json_file(cfg_.paths.work_dir / files::kManifestDir / (std::string(to_string(stage_)) + ".json"), manifest);
  }

 private:
  Stage stage_;
  const PipelineConfig& cfg_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

embeddings::EmbeddingStore load_store(const fs::path& path) {
  auto store = embeddings::load_embeddings(path);
  for (const auto& id : store.norm_warnings()) spdlog::warn("{}: row {} was not unit-norm; renormalized", path.string(), id);
  return store;
}

// Passage embeddings restricted to the deduplicated corpus; every surviving
// passage must have one.
embeddings::EmbeddingStore surviving_passages(StageRun& run, const PipelineConfig& cfg) {
  const auto corpus = corpus::load_corpus(run.work_input(files::kDedupCorpus));
  auto all = load_store(run.input(cfg.paths.passage_embeddings, "passage_embeddings"));
  for (const auto& p : corpus.passages()) {
    if (!all.contains(p.id)) throw DataError("no embedding for passage " + p.id);
  }
  return all.filter([&](const std::string& id) { return corpus.contains(id); });
}

embeddings::EmbeddingStore query_store(StageRun& run, const PipelineConfig& cfg, std::size_t dim) {
  auto store = load_store(run.input(cfg.paths.query_embeddings, "query_embeddings"));
  if (store.dim() != dim) {
    throw DataError("query embedding dimension " + std::to_string(store.dim()) + " differs from passage dimension " +
                    std::to_string(dim));
  }
  return store;
}

std::vector<negatives::MiningRequest> requests_from(std::span<const querygen::GeneratedQuery> queries) {
  std::vector<negatives::MiningRequest> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back({q.query_id, q.source_passage_id});
  return out;
}

void stage_dedup(const PipelineConfig& cfg) {
  StageRun run(Stage::dedup, cfg);
  const auto input = corpus::load_corpus(run.input(cfg.paths.corpus, "corpus"));
  const auto result = corpus::dedup_corpus(input);
  corpus::write_corpus(run.output(files::kDedupCorpus), result.corpus);
  corpus::write_removals(run.output(files::kDedupRemoved), result.removed);
  spdlog::info("dedup: {} passages in, {} kept, {} removed", input.size(), result.corpus.size(),
               result.removed.size());
  run.finish();
}

void stage_filter(const PipelineConfig& cfg) {
  StageRun run(Stage::filter_queries, cfg);
  const auto corpus = corpus::load_corpus(run.work_input(files::kDedupCorpus));
  std::unordered_map<std::string, std::string> superstring;
  for (const auto& r : corpus::load_removals(run.work_input(files::kDedupRemoved))) {
    superstring.emplace(r.removed, r.kept_superstring);
  }
  auto queries = querygen::load_queries(run.input(cfg.paths.queries, "queries"));
  std::size_t remapped = 0;
  for (auto& q : queries) {
    if (auto it = superstring.find(q.source_passage_id); it != superstring.end()) {
      q.source_passage_id = it->second;
      ++remapped;
    }
    for (const auto& w : querygen::validate_query(q)) spdlog::warn("query {}: {}", q.query_id, w);
  }
  if (const auto errors = querygen::structural_errors(queries, corpus); !errors.empty()) {
    throw DataError(errors.front());
  }
  const auto passages = surviving_passages(run, cfg);
  const auto query_embs = query_store(run, cfg, passages.dim());
  const auto teacher = teacher::load_raw_scores(run.input(cfg.paths.teacher_scores, "teacher_scores"));
  const auto report = querygen::filter_queries(queries, query_embs, passages, teacher, cfg.filter_depth);

  const std::unordered_set<std::string> kept(report.kept.begin(), report.kept.end());
  std::vector<querygen::GeneratedQuery> survivors;
  for (const auto& q : queries) {
    if (kept.contains(q.query_id)) survivors.push_back(q);
  }
  querygen::write_queries(run.output(files::kFilteredQueries), survivors);
  write_json_file(run.output(files::kFilterReport), querygen::report_to_json(report));
  spdlog::info("filter: {} queries, {} remapped to a kept superstring, {} kept, {} failed retrieval, {} failed teacher",
               queries.size(), remapped, report.kept.size(), report.dropped_stage1.size(),
               report.dropped_stage2.size());
  run.finish();
}

void stage_normalize(const PipelineConfig& cfg) {
  StageRun run(Stage::normalize_scores, cfg);
  const auto queries = querygen::load_queries(run.work_input(files::kFilteredQueries));
  std::unordered_set<std::string> kept;
  for (const auto& q : queries) kept.insert(q.query_id);
  const auto raw = teacher::load_raw_scores(run.input(cfg.paths.teacher_scores, "teacher_scores"));
  const auto normalized =
      teacher::normalize_scores(raw.filter_queries([&](const std::string& id) { return kept.contains(id); }));
  teacher::write_normalized_scores(run.output(files::kNormalizedScores), normalized);
  spdlog::info("normalize: {} scores, clip range [{:.6g}, {:.6g}]", normalized.scores.size(), normalized.lo,
               normalized.hi);
  run.finish();
}

void stage_mine(const PipelineConfig& cfg) {
  StageRun run(Stage::mine, cfg);
  const auto queries = querygen::load_queries(run.work_input(files::kFilteredQueries));
  const auto teacher = teacher::load_normalized_scores(run.work_input(files::kNormalizedScores));
  const auto passages = surviving_passages(run, cfg);
  const auto query_embs = query_store(run, cfg, passages.dim());
  const auto requests = requests_from(queries);
  const auto outcome = negatives::mine_all(requests, passages, query_embs, teacher.scores, cfg.mining);
  negatives::write_groups(run.output(files::kGroups), outcome.groups);
  {
    auto out = open_output(run.output(files::kRejected));
    for (const auto& r : outcome.rejected) out << dump_line(json{{"query_id", r.query_id}, {"reason", r.reason}}) << '\n';
  }
  spdlog::info("mine: {} groups, {} rejected", outcome.groups.size(), outcome.rejected.size());
  run.finish();
}

trainer::TrainConfig effective_train(const PipelineConfig& cfg) {
  auto train = cfg.train;
  train.seed = cfg.seed;
  train.deterministic = cfg.deterministic;
  return train;
}

void stage_train(const PipelineConfig& cfg) {
  StageRun run(Stage::train, cfg);
  const auto groups = negatives::load_groups(run.work_input(files::kGroups));
  const auto passages = surviving_passages(run, cfg);
  const auto query_embs = query_store(run, cfg, passages.dim());
  const auto train_cfg = effective_train(cfg);
  auto result = trainer::train(groups, {query_embs, passages}, cfg.loss, train_cfg);
  const auto ckpt = run.output(files::kCheckpoint);
  trainer::save_checkpoint(ckpt, result.model, cfg.seed,
                           json{{"train", trainer::to_json(train_cfg)}, {"loss", trainer::to_json(cfg.loss)}});
  result.report.model_path = files::kCheckpoint;
  write_json_file(run.output(files::kTrainReport), trainer::to_json(result.report));
  spdlog::info("train: best epoch {} of {}, {}", result.report.best_epoch, result.report.epochs.size() - 1,
               result.report.stopping_reason);
  run.finish();
}

void stage_apply(const PipelineConfig& cfg) {
  StageRun run(Stage::apply, cfg);
  const auto ckpt = trainer::load_checkpoint(run.work_input(files::kCheckpoint));
  const auto passages = surviving_passages(run, cfg);
  const auto query_embs = query_store(run, cfg, passages.dim());
  embeddings::write_embeddings_binary(run.output(files::kAdaptedPassages), trainer::apply_adapter(ckpt.model, passages));
  embeddings::write_embeddings_binary(run.output(files::kAdaptedQueries), trainer::apply_adapter(ckpt.model, query_embs));
  run.finish();
}

std::vector<std::string> eval_query_ids(const eval::Qrels& qrels, const embeddings::EmbeddingStore& queries) {
  std::vector<std::string> ids;
  for (const auto& [qid, judged] : qrels.queries()) {
    if (queries.contains(qid)) {
      ids.push_back(qid);
    } else {
      spdlog::warn("judged query {} has no embedding; it scores 0", qid);
    }
  }
  if (ids.empty()) throw DataError("no judged query has an embedding");
  return ids;
}

void stage_retrieve(const PipelineConfig& cfg) {
  StageRun run(Stage::retrieve, cfg);
  const auto qrels = eval::load_qrels(run.input(cfg.paths.qrels, "qrels"));
  const auto adapted_passages = load_store(run.work_input(files::kAdaptedPassages));
  const auto adapted_queries = load_store(run.work_input(files::kAdaptedQueries));
  const auto ids = eval_query_ids(qrels, adapted_queries);
  const auto adapted = embeddings::top_k_batch(adapted_queries, adapted_passages, cfg.retrieval_depth, Exec::parallel, ids);
  eval::write_run(run.output(files::kRun), eval::run_from_retrieval(adapted, "densetune"));

  const auto passages = surviving_passages(run, cfg);
  const auto query_embs = query_store(run, cfg, passages.dim());
  const auto base = embeddings::top_k_batch(query_embs, passages, cfg.retrieval_depth, Exec::parallel, ids);
  eval::write_run(run.output(files::kBaseRun), eval::run_from_retrieval(base, "base"));
  run.finish();
}

void stage_evaluate(const PipelineConfig& cfg) {
  StageRun run(Stage::evaluate, cfg);
  const auto qrels = eval::load_qrels(run.input(cfg.paths.qrels, "qrels"));
  const auto adapted = eval::evaluate_run(eval::load_run(run.work_input(files::kRun)), qrels);
  const auto base = eval::evaluate_run(eval::load_run(run.work_input(files::kBaseRun)), qrels);
  json out{{"adapted", eval::metrics_to_json(adapted)},
           {"base", eval::metrics_to_json(base)},
           {"delta",
            {{"ndcg@10", adapted.ndcg10.mean - base.ndcg10.mean},
             {"recall@100", adapted.recall100.mean - base.recall100.mean},
             {"map", adapted.map.mean - base.map.mean}}}};
  write_json_file(run.output(files::kMetrics), out);
  spdlog::info("evaluate: ndcg@10 {:.4f} (base {:.4f}), recall@100 {:.4f} (base {:.4f}), map {:.4f} (base {:.4f})",
               adapted.ndcg10.mean, base.ndcg10.mean, adapted.recall100.mean, base.recall100.mean, adapted.map.mean,
               base.map.mean);
  run.finish();
}

void stage_rerank(const PipelineConfig& cfg) {
  StageRun run(Stage::rerank_eval, cfg);
  const auto qrels = eval::load_qrels(run.input(cfg.paths.qrels, "qrels"));
  const auto teacher = teacher::load_raw_scores(run.input(cfg.paths.eval_teacher_scores, "eval_teacher_scores"));
  const auto base_run = eval::load_run(run.work_input(files::kBaseRun));
  const auto reranked = eval::rerank_run(base_run, teacher, cfg.rerank_depth);
  const auto before = eval::evaluate_run(base_run, qrels);
  const auto after = eval::evaluate_run(reranked, qrels);
  write_json_file(run.output(files::kRerankMetrics),
                  json{{"base", eval::metrics_to_json(before)}, {"reranked", eval::metrics_to_json(after)}});
  spdlog::info("rerank-eval: ndcg@10 {:.4f} -> {:.4f}", before.ndcg10.mean, after.ndcg10.mean);
  run.finish();
}

void stage_sweep(const PipelineConfig& cfg) {
  StageRun run(Stage::sweep_threshold, cfg);
  const auto queries = querygen::load_queries(run.work_input(files::kFilteredQueries));
  const auto teacher = teacher::load_normalized_scores(run.work_input(files::kNormalizedScores));
  const auto qrels = eval::load_qrels(run.input(cfg.paths.qrels, "qrels"));
  const auto passages = surviving_passages(run, cfg);
  const auto query_embs = query_store(run, cfg, passages.dim());
  const auto requests = requests_from(queries);
  auto loss = cfg.loss;
  if (cfg.sweep_contrastive_only) loss.distill_weight = 0.0;
  const negatives::SweepSource source{requests, passages, query_embs, teacher.scores, cfg.mining, loss,
                                      effective_train(cfg)};
  const negatives::EvalBundle bundle{query_embs, passages, eval_query_ids(qrels, query_embs), qrels,
                                     cfg.retrieval_depth};
  const auto rows = negatives::threshold_sweep(source, cfg.sweep_thresholds, bundle);
  negatives::write_sweep_csv(run.output(files::kSweep), rows);
  run.finish();
}

}  // namespace

void PipelineConfig::validate() const {
  mining.validate();
  loss.validate();
  train.validate();
  if (mining.K != loss.K) throw UsageError("mining.K and loss.K must agree");
  if (filter_depth == 0) throw UsageError("filter.depth must be positive");
  if (retrieval_depth == 0 || retrieval_depth > eval::kMaxRunDepth) {
    throw UsageError("eval.retrieval_depth must lie in [1, " + std::to_string(eval::kMaxRunDepth) + "]");
  }
  if (rerank_depth == 0) throw UsageError("eval.rerank_depth must be positive");
  for (double t : sweep_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw UsageError("sweep thresholds must lie in (0, 1]");
  }
  if (paths.work_dir.empty()) throw UsageError("paths.work_dir is not set");
}

PipelineConfig config_from_json(const json& obj, const fs::path& base_dir) {
  reject_unknown_keys(obj,
                      {"paths", "seed", "deterministic", "log_level", "filter", "mining", "loss", "train", "eval",
                       "sweep"},
                      "config");
  PipelineConfig cfg;
  const json paths = obj.value("paths", json::object());
  reject_unknown_keys(paths,
                      {"corpus", "queries", "passage_embeddings", "query_embeddings", "teacher_scores", "qrels",
                       "eval_teacher_scores", "work_dir"},
                      "paths");
  for (const auto& f : kPathFields) {
    std::string value = get_or<std::string>(paths, f.name, "", "paths");
    if (const char* env = std::getenv(env_name(f.name).c_str()); env != nullptr && *env != '\0') value = env;
    if (value.empty()) continue;
    fs::path p(value);
    cfg.paths.*f.member = p.is_absolute() ? p : base_dir / p;
  }
  cfg.seed = get_or<std::uint64_t>(obj, "seed", cfg.seed, "config");
  cfg.deterministic = get_or<bool>(obj, "deterministic", cfg.deterministic, "config");
  cfg.log_level = get_or<std::string>(obj, "log_level", cfg.log_level, "config");

  const json filter = obj.value("filter", json::object());
  reject_unknown_keys(filter, {"depth"}, "filter");
  cfg.filter_depth = get_or<std::size_t>(filter, "depth", cfg.filter_depth, "filter");

  const json mining = obj.value("mining", json::object());
  reject_unknown_keys(mining, {"K", "threshold_fraction", "mining_depth"}, "mining");
  cfg.mining.K = get_or<std::size_t>(mining, "K", cfg.mining.K, "mining");
  cfg.mining.threshold_fraction = get_or<double>(mining, "threshold_fraction", cfg.mining.threshold_fraction, "mining");
  cfg.mining.mining_depth = get_or<std::size_t>(mining, "mining_depth", cfg.mining.mining_depth, "mining");

  const json loss = obj.value("loss", json::object());
  reject_unknown_keys(loss, {"tau_student", "tau_teacher", "tau_contrastive", "contrastive_weight", "distill_weight", "K"},
                      "loss");
  cfg.loss = trainer::loss_config_from_json(loss);
  if (!loss.contains("K")) cfg.loss.K = cfg.mining.K;

  const json train = obj.value("train", json::object());
  reject_unknown_keys(train,
                      {"learning_rate", "queries_per_batch", "max_epochs", "patience", "dev_fraction", "chunk_size",
                       "seed", "beta1", "beta2", "eps", "weight_decay", "deterministic"},
                      "train");
  cfg.train = trainer::train_config_from_json(train);

  const json ev = obj.value("eval", json::object());
  reject_unknown_keys(ev, {"retrieval_depth", "rerank_depth"}, "eval");
  cfg.retrieval_depth = get_or<std::size_t>(ev, "retrieval_depth", cfg.retrieval_depth, "eval");
  cfg.rerank_depth = get_or<std::size_t>(ev, "rerank_depth", cfg.rerank_depth, "eval");

  const json sweep = obj.value("sweep", json::object());
  reject_unknown_keys(sweep, {"thresholds", "contrastive_only"}, "sweep");
  cfg.sweep_thresholds = get_or<std::vector<double>>(sweep, "thresholds", cfg.sweep_thresholds, "sweep");
  cfg.sweep_contrastive_only = get_or<bool>(sweep, "contrastive_only", cfg.sweep_contrastive_only, "sweep");

  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  json obj;
  try {
    obj = read_json_file(path);
  } catch (const Error& e) {
    throw UsageError(std::string("unreadable config: ") + e.what());
  }
  return config_from_json(obj, path.parent_path());
}

json to_json(const PipelineConfig& cfg) {
  json paths = json::object();
  for (const auto& f : kPathFields) paths[f.name] = (cfg.paths.*f.member).string();
  return json{{"paths", paths},
              {"seed", cfg.seed},
              {"deterministic", cfg.deterministic},
              {"log_level", cfg.log_level},
              {"filter", {{"depth", cfg.filter_depth}}},
              {"mining", mining_to_json(cfg.mining)},
              {"loss", trainer::to_json(cfg.loss)},
              {"train", trainer::to_json(cfg.train)},
              {"eval", {{"retrieval_depth", cfg.retrieval_depth}, {"rerank_depth", cfg.rerank_depth}}},
              {"sweep", {{"thresholds", cfg.sweep_thresholds}, {"contrastive_only", cfg.sweep_contrastive_only}}}};
}

namespace {
constexpr std::pair<Stage, std::string_view> kStageNames[] = {
    {Stage::dedup, "dedup"},
    {Stage::filter_queries, "filter-queries"},
    {Stage::normalize_scores, "normalize-scores"},
    {Stage::mine, "mine"},
    {Stage::train, "train"},
    {Stage::apply, "apply"},
    {Stage::retrieve, "retrieve"},
    {Stage::evaluate, "evaluate"},
    {Stage::rerank_eval, "rerank-eval"},
    {Stage::sweep_threshold, "sweep-threshold"},
    {Stage::pipeline, "pipeline"},
};
}  // namespace

std::optional<Stage> parse_stage(std::string_view name) {
  for (const auto& [stage, n] : kStageNames) {
    if (n == name) return stage;
  }
  return std::nullopt;
}

std::string_view to_string(Stage stage) {
  for (const auto& [s, n] : kStageNames) {
    if (s == stage) return n;
  }
  return "unknown";
}

void run_stage(Stage stage, const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.paths.work_dir);
  switch (stage) {
    case Stage::dedup: return stage_dedup(cfg);
    case Stage::filter_queries: return stage_filter(cfg);
    case Stage::normalize_scores: return stage_normalize(cfg);
    case Stage::mine: return stage_mine(cfg);
    case Stage::train: return stage_train(cfg);
    case Stage::apply: return stage_apply(cfg);
    case Stage::retrieve: return stage_retrieve(cfg);
    case Stage::evaluate: return stage_evaluate(cfg);
    case Stage::rerank_eval: return stage_rerank(cfg);
    case Stage::sweep_threshold: return stage_sweep(cfg);
    case Stage::pipeline:
      for (Stage s : {Stage::dedup, Stage::filter_queries, Stage::normalize_scores, Stage::mine, Stage::train,
                      Stage::apply, Stage::retrieve, Stage::evaluate}) {
        run_stage(s, cfg);
      }
      return;
  }
}

}  // namespace densetune::pipeline
