#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "densetune/error.hpp"
#include "densetune/io.hpp"
#include "densetune/pipeline.hpp"
#include "test_util.hpp"

using namespace densetune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

Outcome run(const std::string& env, const std::string& args, const fs::path& scratch) {
  const auto err_path = scratch / "stderr.txt";
  const std::string cmd = env + " " + DENSETUNE_CLI + " " + args + " 2> " + err_path.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  Outcome out;
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_path);
  std::stringstream ss;
  ss << in.rdbuf();
  out.err = ss.str();
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Relative path -> contents for every regular file outside manifests/.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    if (rel.rfind(pipeline::files::kManifestDir, 0) == 0) continue;
    out[rel] = slurp(e.path());
  }
  return out;
}

/// One generated fixture shared by every test case.
const fs::path& fixture_dir() {
  static test_util::TempDir dir("cli");
  static const bool made = [] {
    const std::string cmd = std::string(DENSETUNE_FIXTURE_TOOL) + " --out " + (dir / "data").string() + " > /dev/null";
    return std::system(cmd.c_str()) == 0;
  }();
  REQUIRE(made);
  return dir.path();
}

std::string config_arg() { return "--config " + (fixture_dir() / "data" / "config.json").string(); }

std::string work_env(const fs::path& work) { return "DENSETUNE_WORK_DIR=" + work.string(); }

}  // namespace

TEST_CASE("pipeline improves on the base embeddings and writes manifests") {
  const auto work = fixture_dir() / "work-full";
  const auto r = run(work_env(work), "pipeline " + config_arg(), fixture_dir());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto metrics = read_json_file(work / pipeline::files::kMetrics);
  const double adapted = metrics["adapted"]["ndcg@10"]["mean"];
  const double base = metrics["base"]["ndcg@10"]["mean"];
  CHECK(adapted > base + 0.05);
  for (const char* stage : {"dedup", "filter-queries", "normalize-scores", "mine", "train", "apply", "retrieve",
                            "evaluate"}) {
    const auto m = read_json_file(work / pipeline::files::kManifestDir / (std::string(stage) + ".json"));
    CHECK(m["stage"] == stage);
    CHECK(m["version"] == pipeline::kVersion);
    CHECK(m["config_sha256"].get<std::string>().size() == 64);
    for (const auto& [path, sha] : m["outputs"].items()) CHECK(sha == sha256_file(path));
  }
  const auto removed = slurp(work / pipeline::files::kDedupRemoved);
  CHECK(std::count(removed.begin(), removed.end(), '\n') == 20);
}

TEST_CASE("stage-by-stage runs reproduce the pipeline byte for byte") {
  const auto full = fixture_dir() / "work-full";
  if (!fs::exists(full / pipeline::files::kMetrics)) {
    REQUIRE(run(work_env(full), "pipeline " + config_arg(), fixture_dir()).code == 0);
  }
  const auto staged = fixture_dir() / "work-staged";
  for (const char* stage : {"dedup", "filter-queries", "normalize-scores", "mine", "train", "apply", "retrieve",
                            "evaluate"}) {
    const auto r = run(work_env(staged), std::string(stage) + " " + config_arg(), fixture_dir());
    REQUIRE_MESSAGE(r.code == 0, stage << ": " << r.err);
  }
  const auto a = tree(full);
  const auto b = tree(staged);
  REQUIRE(a.size() == b.size());
  for (const auto& [name, bytes] : a) {
    CAPTURE(name);
    REQUIRE(b.contains(name));
    CHECK(b.at(name) == bytes);
  }
}

TEST_CASE("rerank-eval and sweep stages write their reports") {
  const auto work = fixture_dir() / "work-extra";
  REQUIRE(run(work_env(work), "pipeline " + config_arg(), fixture_dir()).code == 0);
  auto r = run(work_env(work), "rerank-eval " + config_arg(), fixture_dir());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rerank = read_json_file(work / pipeline::files::kRerankMetrics);
  CHECK(rerank.contains("reranked"));
  r = run(work_env(work), "sweep-threshold " + config_arg(), fixture_dir());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto csv = slurp(work / pipeline::files::kSweep);
  CHECK(csv.rfind("threshold,map,ndcg10,recall100\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("usage errors exit 1 and name the problem") {
  const auto scratch = fixture_dir();
  auto r = run(work_env(scratch / "w1") + " DENSETUNE_PASSAGE_EMBEDDINGS=/nonexistent/passages.emb",
               "filter-queries " + config_arg(), scratch);
  CHECK(r.code == 1);
  r = run(work_env(scratch / "w1") + " DENSETUNE_PASSAGE_EMBEDDINGS=/nonexistent/passages.emb",
          "pipeline " + config_arg(), scratch);
  CHECK(r.code == 1);
  CHECK(r.err.find("/nonexistent/passages.emb") != std::string::npos);
  r = run("", "frobnicate " + config_arg(), scratch);
  CHECK(r.code == 1);
  r = run("", "pipeline", scratch);
  CHECK(r.code == 1);
  r = run("", "pipeline --config /nonexistent/config.json", scratch);
  CHECK(r.code == 1);
  r = run(work_env(scratch / "w2"), "train " + config_arg(), scratch);
  CHECK(r.code == 1);
  CHECK(r.err.find(pipeline::files::kGroups) != std::string::npos);

  const auto bad = scratch / "bad-config.json";
  auto cfg = read_json_file(scratch / "data" / "config.json");
  cfg["mystery"] = 1;
  write_json_file(bad, cfg);
  r = run("", "pipeline --config " + bad.string(), scratch);
  CHECK(r.code == 1);
  CHECK(r.err.find("mystery") != std::string::npos);
}

TEST_CASE("malformed data exits 2") {
  const auto scratch = fixture_dir();
  const auto broken = scratch / "broken.jsonl";
  {
    std::ofstream out(broken);
    out << "{\"id\": \"a\", \"text\": \"x\"}\nnot json\n";
  }
  const auto r = run(work_env(scratch / "w3") + " DENSETUNE_CORPUS=" + broken.string(), "dedup " + config_arg(),
                     scratch);
  CHECK(r.code == 2);
  CHECK(r.err.find("broken.jsonl") != std::string::npos);
}

TEST_CASE("config round-trips and rejects inconsistent settings") {
  const auto base = fixture_dir() / "data";
  const auto cfg = pipeline::load_config(base / "config.json");
  CHECK(cfg.paths.corpus == base / "corpus.jsonl");
  const auto again = pipeline::config_from_json(pipeline::to_json(cfg), base);
  CHECK(pipeline::to_json(again) == pipeline::to_json(cfg));
  auto j = pipeline::to_json(cfg);
  j["mining"]["K"] = 7;
  CHECK_THROWS_AS(pipeline::config_from_json(j, base).validate(), UsageError);
  for (auto stage : {pipeline::Stage::dedup, pipeline::Stage::rerank_eval, pipeline::Stage::pipeline}) {
    CHECK(pipeline::parse_stage(pipeline::to_string(stage)) == stage);
  }
  CHECK_FALSE(pipeline::parse_stage("nope").has_value());
}
