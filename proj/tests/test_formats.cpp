#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "densetune/corpus.hpp"
#include "densetune/embeddings.hpp"
#include "densetune/querygen.hpp"
#include "densetune/teacher.hpp"

using namespace densetune;
namespace fs = std::filesystem;

namespace {

fs::path contract_dir() {
  const char* dir = std::getenv("DENSETUNE_CONTRACT_DIR");
  REQUIRE(dir != nullptr);
  return fs::path(dir) / "a";
}

}  // namespace

TEST_CASE("externally written embeddings load without warnings") {
  for (const auto* name : {"passages.emb", "passages.jsonl", "queries.emb"}) {
    CAPTURE(name);
    const auto s = embeddings::load_embeddings(contract_dir() / name, 8);
    CHECK(s.size() > 0);
    CHECK(s.norm_warnings().empty());
  }
  const auto bin = embeddings::load_embeddings(contract_dir() / "passages.emb");
  const auto txt = embeddings::load_embeddings(contract_dir() / "passages.jsonl");
  REQUIRE(bin.size() == txt.size());
  for (std::size_t i = 0; i < bin.size(); ++i)
    for (std::size_t d = 0; d < 8; ++d) CHECK(bin.row(i)[d] == doctest::Approx(txt.row(i)[d]).epsilon(1e-6));
}

TEST_CASE("externally written queries validate against the corpus") {
  const auto c = corpus::load_corpus(contract_dir() / "corpus.jsonl");
  const auto qs = querygen::load_queries(contract_dir() / "queries.jsonl");
  CHECK(qs.size() == 18);
  CHECK(querygen::structural_errors(qs, c).empty());
  for (const auto& q : qs) CHECK(querygen::validate_query(q).empty());
}

TEST_CASE("externally written teacher scores load and normalize") {
  const auto raw = teacher::load_raw_scores(contract_dir() / "teacher_scores.jsonl");
  CHECK(raw.size() == 54);
  const auto n = teacher::normalize_scores(raw);
  for (const auto& e : n.scores.entries()) {
    CHECK(e.score >= 0.0);
    CHECK(e.score <= 1.0);
  }
}
