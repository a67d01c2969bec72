#include "densetune/corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "densetune/error.hpp"
#include "densetune/io.hpp"
#include "densetune/suffix_array.hpp"

namespace densetune::corpus {

std::string normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(raw.data());
  const auto length = static_cast<std::int32_t>(raw.size());
  bool pending_space = false;
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) continue;
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    c = u_tolower(c);
    if (U_GET_GC_MASK(c) & (U_GC_P_MASK | U_GC_S_MASK)) continue;
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    std::uint8_t buf[U8_MAX_LENGTH];
    std::int32_t n = 0;
    U8_APPEND_UNSAFE(buf, n, c);
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
  return out;
}

void Corpus::add(std::string id, std::string text) {
  if (id.empty()) throw DataError("passage with empty id");
  if (index_.contains(id)) throw DataError("duplicate passage id: " + id);
  index_.emplace(id, passages_.size());
  std::string norm = normalize_text(text);
  passages_.push_back(Passage{std::move(id), std::move(text), std::move(norm)});
}

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

/// Iterative segment tree; Op must be associative and commutative.
template <typename T, typename Op>
class SegmentTree {
 public:
  SegmentTree(std::span<const T> values, T identity, Op op)
      : n_(values.size()), identity_(identity), op_(op), tree_(2 * values.size(), identity) {
    std::copy(values.begin(), values.end(), tree_.begin() + static_cast<std::ptrdiff_t>(n_));
    for (std::size_t i = n_; i-- > 1;) tree_[i] = op_(tree_[2 * i], tree_[2 * i + 1]);
  }

  /// Fold over [lo, hi).
  T query(std::size_t lo, std::size_t hi) const {
    T left = identity_, right = identity_;
    for (lo += n_, hi += n_; lo < hi; lo >>= 1, hi >>= 1) {
      if (lo & 1) left = op_(left, tree_[lo++]);
      if (hi & 1) right = op_(tree_[--hi], right);
    }
    return op_(left, right);
  }

 private:
  std::size_t n_;
  T identity_;
  Op op_;
  std::vector<T> tree_;
};

struct MinOp {
  std::int32_t operator()(std::int32_t a, std::int32_t b) const { return std::min(a, b); }
};
struct MaxOp {
  std::uint64_t operator()(std::uint64_t a, std::uint64_t b) const { return std::max(a, b); }
};

constexpr std::int32_t kSentinel = 0;
constexpr std::int32_t kSeparator = 1;
constexpr std::int32_t kByteOffset = 2;
constexpr std::int32_t kMaxSymbol = 255 + kByteOffset;

/// Container preference key: longer first, then earlier. 0 marks separator slots.
std::uint64_t container_key(std::size_t length, std::size_t index) {
  return (static_cast<std::uint64_t>(length + 1) << 32) |
         (0xFFFFFFFFULL - static_cast<std::uint64_t>(index));
}

std::size_t key_index(std::uint64_t key) { return 0xFFFFFFFFULL - (key & 0xFFFFFFFFULL); }

struct ContainmentIndex {
  std::vector<std::int32_t> rank_of_start;  // per passage
  std::vector<std::int32_t> lengths;        // per passage
  SegmentTree<std::int32_t, MinOp> lcp;
  SegmentTree<std::uint64_t, MaxOp> containers;
  std::size_t text_size;

  /// Best container of passage d: the longest (then earliest) passage whose
  /// text contains d's text. Returns d itself when nothing else qualifies.
  std::size_t best_container(std::size_t d) const {
    const auto len = lengths[d];
    std::size_t lo = 0, hi = text_size;  // SA rows [lo, hi) share d's text as prefix
    if (len > 0) {
      const auto r = static_cast<std::size_t>(rank_of_start[d]);
      // Smallest lo with min(lcp[lo + 1 .. r]) >= len.
      std::size_t a = 0, b = r;
      while (a < b) {
        const std::size_t mid = (a + b) / 2;
        if (lcp.query(mid + 1, r + 1) >= len) {
          b = mid;
        } else {
          a = mid + 1;
        }
      }
      lo = a;
      // Largest last row with min(lcp[r + 1 .. last]) >= len.
      a = r;
      b = text_size - 1;
      while (a < b) {
        const std::size_t mid = (a + b + 1) / 2;
        if (lcp.query(r + 1, mid + 1) >= len) {
          a = mid;
        } else {
          b = mid - 1;
        }
      }
      hi = a + 1;
    }
    return key_index(containers.query(lo, hi));
  }
};

ContainmentIndex build_index(const Corpus& corpus) {
  std::size_t total = 1;
  for (const auto& p : corpus.passages()) total += p.norm_text.size() + 1;
  if (total >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
    throw DataError("corpus too large for the 32-bit suffix index");
  }
  if (corpus.size() >= 0xFFFFFFFFULL) throw DataError("too many passages");

  std::vector<std::int32_t> text;
  text.reserve(total);
  std::vector<std::int32_t> owner;
  owner.reserve(total);
  std::vector<std::int32_t> starts, lengths;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& norm = corpus[d].norm_text;
    starts.push_back(static_cast<std::int32_t>(text.size()));
    lengths.push_back(static_cast<std::int32_t>(norm.size()));
    for (unsigned char c : norm) {
      text.push_back(static_cast<std::int32_t>(c) + kByteOffset);
      owner.push_back(static_cast<std::int32_t>(d));
    }
    text.push_back(kSeparator);
    owner.push_back(-1);
  }
  text.push_back(kSentinel);
  owner.push_back(-1);

  const auto sa = build_suffix_array(text, kMaxSymbol);
  const auto lcp = build_lcp_array(text, sa);

  std::vector<std::int32_t> rank(text.size());
  std::vector<std::uint64_t> keys(text.size(), 0);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    rank[sa[i]] = static_cast<std::int32_t>(i);
    const auto o = owner[sa[i]];
    if (o >= 0) {
      keys[i] = container_key(static_cast<std::size_t>(lengths[o]), static_cast<std::size_t>(o));
    }
  }
  // An empty passage owns no text position; give it its own separator slot so
  // it can win as its own container when nothing else exists.
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    if (lengths[d] == 0) {
      auto& key = keys[rank[starts[d]]];
      key = std::max(key, container_key(0, d));
    }
  }

  std::vector<std::int32_t> rank_of_start(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) rank_of_start[d] = rank[starts[d]];

  return ContainmentIndex{
      std::move(rank_of_start),
      std::move(lengths),
      SegmentTree<std::int32_t, MinOp>(lcp, std::numeric_limits<std::int32_t>::max(), MinOp{}),
      SegmentTree<std::uint64_t, MaxOp>(keys, 0, MaxOp{}),
      text.size(),
  };
}

}  // namespace

DedupResult dedup_corpus(const Corpus& corpus, Exec exec) {
  DedupResult result;
  if (corpus.empty()) return result;

  const auto index = build_index(corpus);
  const auto n = static_cast<std::int64_t>(corpus.size());
  std::vector<std::size_t> container(corpus.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 256)
    for (std::int64_t d = 0; d < n; ++d) container[d] = index.best_container(static_cast<std::size_t>(d));
  } else {
    for (std::int64_t d = 0; d < n; ++d) container[d] = index.best_container(static_cast<std::size_t>(d));
  }

  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& p = corpus[d];
    if (container[d] == d) {
      result.corpus.add(p.id, p.text);
    } else {
      result.removed.push_back(Removal{p.id, corpus[container[d]].id});
    }
  }
  return result;
}

Corpus load_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    corpus.add(require_string(obj, "id", line), require_string(obj, "text", line));
  });
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  auto out = open_output(path);
  for (const auto& p : corpus.passages()) {
    out << dump_line(json{{"id", p.id}, {"text", p.text}}) << '\n';
  }
}

void write_removals(const std::filesystem::path& path, std::span<const Removal> removed) {
  auto out = open_output(path);
  for (const auto& r : removed) {
    out << dump_line(json{{"removed", r.removed}, {"kept_superstring", r.kept_superstring}}) << '\n';
  }
}

std::vector<Removal> load_removals(const std::filesystem::path& path) {
  std::vector<Removal> removed;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    removed.push_back(Removal{require_string(obj, "removed", line),
                              require_string(obj, "kept_superstring", line)});
  });
  return removed;
}

}  // namespace densetune::corpus
