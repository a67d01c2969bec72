// Writes the synthetic end-to-end task in the pipeline's input formats, plus
// a config.json that runs it.

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "densetune/error.hpp"
#include "densetune/fixtures.hpp"
#include "densetune/io.hpp"
#include "densetune/pipeline.hpp"
#include "densetune/teacher.hpp"

namespace dt = densetune;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic retrieval fixture"};
  std::string out_dir;
  std::uint64_t seed = dt::fixtures::TaskConfig{}.seed;
  std::size_t planted = 20;
  bool jsonl = false;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--seed", seed, "fixture seed");
  app.add_option("--planted-substrings", planted, "distractors rewritten as substrings of other passages");
  app.add_flag("--jsonl-embeddings", jsonl, "write embeddings as JSON-Lines instead of packed binary");
  CLI11_PARSE(app, argc, argv);

  try {
    dt::fixtures::TaskConfig tc;
    tc.seed = seed;
    tc.planted_substrings = planted;
    const auto task = dt::fixtures::make_task(tc);
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const char* emb_ext = jsonl ? ".jsonl" : ".emb";
    auto write_store = [&](const fs::path& p, const dt::embeddings::EmbeddingStore& s) {
      if (jsonl) {
        dt::embeddings::write_embeddings_jsonl(p, s);
      } else {
        dt::embeddings::write_embeddings_binary(p, s);
      }
    };
    dt::corpus::write_corpus(dir / "corpus.jsonl", task.corpus);
    dt::querygen::write_queries(dir / "queries.jsonl", task.train_queries);
    write_store(dir / (std::string("passages") + emb_ext), task.passage_embs);
    write_store(dir / (std::string("queries") + emb_ext), task.query_embs);
    dt::teacher::write_raw_scores(dir / "teacher_scores.jsonl", task.raw_teacher);
    dt::teacher::write_raw_scores(dir / "eval_teacher_scores.jsonl", task.eval_teacher);
    dt::eval::write_qrels(dir / "qrels.txt", task.eval_qrels);

    dt::pipeline::PipelineConfig cfg;
    cfg.seed = 0;
    cfg.train = dt::fixtures::task_train_config();
    auto obj = dt::pipeline::to_json(cfg);
    obj["paths"] = {{"corpus", "corpus.jsonl"},
                    {"queries", "queries.jsonl"},
                    {"passage_embeddings", std::string("passages") + emb_ext},
                    {"query_embeddings", std::string("queries") + emb_ext},
                    {"teacher_scores", "teacher_scores.jsonl"},
                    {"qrels", "qrels.txt"},
                    {"eval_teacher_scores", "eval_teacher_scores.jsonl"},
                    {"work_dir", "work"}};
    {
      auto out = dt::open_output(dir / "config.json");
      out << obj.dump(2) << '\n';
    }
    std::printf("wrote %zu passages, %zu training queries, %zu judged queries to %s\n", task.corpus.size(),
                task.train_queries.size(), task.eval_query_ids.size(), dir.string().c_str());
    return 0;
  } catch (const dt::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  }
}
