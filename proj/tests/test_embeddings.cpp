#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "densetune/embeddings.hpp"
#include "densetune/error.hpp"
#include "densetune/fixtures.hpp"
#include "test_util.hpp"

using namespace densetune;
using namespace densetune::embeddings;

TEST_CASE("cosine similarity examples") {
  const std::vector<double> a{1, 0}, b{0, 1}, c{2, 2}, d{-3, 0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, c) == doctest::Approx(std::sqrt(0.5)));
  CHECK(cosine_similarity(a, d) == doctest::Approx(-1.0));
  const std::vector<double> z{0, 0};
  CHECK_THROWS_AS(cosine_similarity(a, z), NumericError);
}

TEST_CASE("store re-normalizes and flags off-norm rows") {
  EmbeddingStore s(2);
  const std::vector<float> v{3, 4}, u{0.6f, 0.8f};
  s.add("a", v);
  s.add("b", u);
  CHECK(s.row(0)[0] == doctest::Approx(0.6));
  CHECK(s.norm_warnings().size() == 1);
  CHECK(s.norm_warnings()[0] == "a");
  CHECK_THROWS_AS(s.add("a", u), DataError);
  const std::vector<float> wrong{1, 0, 0};
  CHECK_THROWS_AS(s.add("c", wrong), DataError);
  const std::vector<float> zero{0, 0};
  CHECK_THROWS_AS(s.add("d", zero), DataError);
  CHECK_THROWS_AS(s.at("missing"), DataError);
}

TEST_CASE("top_k equals a full sort, ties by id") {
  const auto passages = fixtures::random_store(300, 8, 1);
  const auto queries = fixtures::random_store(20, 8, 2, "q");
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    std::vector<std::pair<double, std::string>> all;
    for (std::size_t p = 0; p < passages.size(); ++p)
      all.emplace_back(cosine_similarity(queries.row(qi), passages.row(p)), passages.id(p));
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto r = top_k(queries.id(qi), queries.row(qi), passages, 25);
    REQUIRE(r.ranked.size() == 25);
    for (std::size_t k = 0; k < 25; ++k) {
      CHECK(r.ranked[k].passage_id == all[k].second);
      CHECK(r.ranked[k].rank == k + 1);
    }
    const auto shorter = top_k(queries.id(qi), queries.row(qi), passages, 10);
    for (std::size_t k = 0; k < 10; ++k) CHECK(shorter.ranked[k].passage_id == r.ranked[k].passage_id);
  }
}

TEST_CASE("top_k with exact ties orders by passage id") {
  EmbeddingStore s(2);
  const std::vector<float> x{1, 0}, y{0, 1};
  s.add("c", x);
  s.add("a", x);
  s.add("b", y);
  const auto r = top_k("q", x, s, 3);
  CHECK(r.ranked[0].passage_id == "a");
  CHECK(r.ranked[1].passage_id == "c");
  CHECK(r.ranked[2].passage_id == "b");
  IdSet ex{"a"};
  CHECK(top_k("q", x, s, 1, &ex).ranked[0].passage_id == "c");
  CHECK(top_k("q", x, s, 10).ranked.size() == 3);
  CHECK_THROWS_AS(top_k("q", x, s, 0), UsageError);
  CHECK_THROWS_AS(top_k("q", x, EmbeddingStore(2), 1), DataError);
}

TEST_CASE("binary and JSON-Lines formats round-trip") {
  test_util::TempDir dir("emb");
  const auto s = fixtures::random_store(40, 5, 4);
  write_embeddings_binary(dir / "s.emb", s);
  write_embeddings_jsonl(dir / "s.jsonl", s);
  for (const auto* name : {"s.emb", "s.jsonl"}) {
    const auto back = load_embeddings(dir / name);
    REQUIRE(back.size() == s.size());
    CHECK(back.dim() == 5);
    CHECK(back.norm_warnings().empty());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(back.id(i) == s.id(i));
      for (std::size_t d = 0; d < 5; ++d) CHECK(back.row(i)[d] == doctest::Approx(s.row(i)[d]).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(load_embeddings(dir / "s.emb", 6), DataError);
  CHECK_THROWS_AS(load_embeddings(dir / "s.jsonl", 4), DataError);
}

TEST_CASE("truncated binary file is rejected") {
  test_util::TempDir dir("emb-trunc");
  const auto s = fixtures::random_store(4, 3, 4);
  write_embeddings_binary(dir / "s.emb", s);
  std::filesystem::resize_file(dir / "s.emb", std::filesystem::file_size(dir / "s.emb") - 5);
  CHECK_THROWS_AS(load_embeddings(dir / "s.emb"), DataError);
}
