#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "densetune/corpus.hpp"
#include "densetune/error.hpp"
#include "densetune/fixtures.hpp"
#include "densetune/rng.hpp"
#include "densetune/suffix_array.hpp"
#include "dedup_oracle.hpp"
#include "test_util.hpp"

using namespace densetune;
using corpus::normalize_text;

namespace {

std::set<std::string> ids_of(const corpus::Corpus& c) {
  std::set<std::string> s;
  for (const auto& p : c.passages()) s.insert(p.id);
  return s;
}

}  // namespace

TEST_CASE("normalize_text examples") {
  CHECK(normalize_text("") == "");
  CHECK(normalize_text("Hello,   World!") == "hello world");
  CHECK(normalize_text("A.b  C\xE2\x80\x94" "d") == "ab cd");
  CHECK(normalize_text("  lead and trail \t\n") == "lead and trail");
  CHECK(normalize_text("a+b=c $5") == "abc 5");
  CHECK(normalize_text("\xC3\x89" "COLE na\xC3\xAF" "ve") == "\xC3\xA9" "cole na\xC3\xAF" "ve");
  CHECK(normalize_text("\xE2\x80\x9Cquoted\xE2\x80\x9D") == "quoted");
  CHECK(normalize_text("bad\xFF" "byte") == "badbyte");
  CHECK(normalize_text("!!! ???") == "");
}

TEST_CASE("normalize_text is idempotent on random byte strings") {
  SplitMix64 g(3);
  const std::string pool = "aB ,.-\t\n\xE2\x80\x94\xC3\x89\xFFxyZ!?";
  for (int t = 0; t < 2000; ++t) {
    std::string s;
    const std::size_t len = g.index(40);
    for (std::size_t k = 0; k < len; ++k) s.push_back(pool[g.index(pool.size())]);
    const auto once = normalize_text(s);
    CHECK(normalize_text(once) == once);
    CHECK(once.find("  ") == std::string::npos);
    if (!once.empty()) {
      CHECK(once.front() != ' ');
      CHECK(once.back() != ' ');
    }
  }
}

TEST_CASE("suffix array and lcp match brute force") {
  SplitMix64 g(11);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + g.index(60);
    const std::int32_t sigma = 1 + static_cast<std::int32_t>(g.index(4));
    std::vector<std::int32_t> text(n);
    for (auto& x : text) x = static_cast<std::int32_t>(g.index(sigma + 1));
    const auto sa = build_suffix_array(text, sigma);
    std::vector<std::int32_t> ref(n);
    std::iota(ref.begin(), ref.end(), 0);
    std::sort(ref.begin(), ref.end(), [&](std::int32_t a, std::int32_t b) {
      return std::lexicographical_compare(text.begin() + a, text.end(), text.begin() + b, text.end());
    });
    REQUIRE(sa == ref);
    const auto lcp = build_lcp_array(text, sa);
    CHECK(lcp[0] == 0);
    for (std::size_t i = 1; i < n; ++i) {
      std::int32_t l = 0;
      while (sa[i - 1] + l < static_cast<std::int32_t>(n) && sa[i] + l < static_cast<std::int32_t>(n) &&
             text[sa[i - 1] + l] == text[sa[i] + l])
        ++l;
      CHECK(lcp[i] == l);
    }
  }
}

TEST_CASE("dedup keeps the earliest of exact duplicates and the superstring") {
  corpus::Corpus c;
  c.add("a", "The quick brown fox.");
  c.add("b", "quick BROWN");
  c.add("c", "the quick brown fox");
  c.add("d", "something else entirely");
  c.add("e", "The quick brown fox jumps");
  const auto r = corpus::dedup_corpus(c, Exec::serial);
  CHECK(ids_of(r.corpus) == std::set<std::string>{"d", "e"});
  REQUIRE(r.removed.size() == 3);
  for (const auto& rm : r.removed) CHECK(rm.kept_superstring == "e");
}

TEST_CASE("dedup of identical passages keeps the first") {
  corpus::Corpus c;
  c.add("x1", "same text");
  c.add("x2", "Same, text!");
  c.add("x3", "same text");
  const auto r = corpus::dedup_corpus(c);
  CHECK(ids_of(r.corpus) == std::set<std::string>{"x1"});
  for (const auto& rm : r.removed) CHECK(rm.kept_superstring == "x1");
}

TEST_CASE("dedup matches the quadratic oracle on random corpora") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto c = fixtures::random_corpus(20 + seed * 3, seed, 0.3);
    const auto oracle = dedup_oracle::oracle_dedup(c);
    const auto r = corpus::dedup_corpus(c, Exec::serial);
    REQUIRE(ids_of(r.corpus) == oracle.survivors);
    REQUIRE(r.removed.size() == oracle.removed.size());
    for (std::size_t i = 0; i < r.removed.size(); ++i) {
      CHECK(r.removed[i].removed == oracle.removed[i].removed);
      CHECK(r.removed[i].kept_superstring == oracle.removed[i].kept_superstring);
      CHECK(oracle.survivors.contains(r.removed[i].kept_superstring));
    }
  }
}

TEST_CASE("dedup is idempotent and parallel equals serial") {
  const auto c = fixtures::random_corpus(400, 5, 0.25);
  const auto serial = corpus::dedup_corpus(c, Exec::serial);
  const auto parallel = corpus::dedup_corpus(c, Exec::parallel);
  CHECK(ids_of(serial.corpus) == ids_of(parallel.corpus));
  REQUIRE(serial.removed.size() == parallel.removed.size());
  for (std::size_t i = 0; i < serial.removed.size(); ++i) {
    CHECK(serial.removed[i].removed == parallel.removed[i].removed);
    CHECK(serial.removed[i].kept_superstring == parallel.removed[i].kept_superstring);
  }
  const auto again = corpus::dedup_corpus(serial.corpus);
  CHECK(again.removed.empty());
  CHECK(again.corpus.size() == serial.corpus.size());
}

TEST_CASE("corpus ids are unique and non-empty") {
  corpus::Corpus c;
  c.add("a", "x");
  CHECK_THROWS_AS(c.add("a", "y"), DataError);
  CHECK_THROWS_AS(c.add("", "y"), DataError);
}

TEST_CASE("corpus and removals round-trip through JSON-Lines") {
  test_util::TempDir dir("corpus");
  const auto c = fixtures::random_corpus(50, 8, 0.3);
  corpus::write_corpus(dir / "c.jsonl", c);
  const auto back = corpus::load_corpus(dir / "c.jsonl");
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back[i].id == c[i].id);
    CHECK(back[i].text == c[i].text);
    CHECK(back[i].norm_text == c[i].norm_text);
  }
  const auto r = corpus::dedup_corpus(c);
  corpus::write_removals(dir / "r.jsonl", r.removed);
  const auto rr = corpus::load_removals(dir / "r.jsonl");
  REQUIRE(rr.size() == r.removed.size());
  for (std::size_t i = 0; i < rr.size(); ++i) CHECK(rr[i].kept_superstring == r.removed[i].kept_superstring);
}

TEST_CASE("malformed corpus lines name the line") {
  test_util::TempDir dir("corpus-bad");
  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"id": "a", "text": "fine"})" << "\n" << R"({"id": "b"})" << "\n";
  }
  try {
    corpus::load_corpus(dir / "bad.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}
