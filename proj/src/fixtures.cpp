#include "densetune/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "densetune/error.hpp"
#include "densetune/rng.hpp"
#include "densetune/teacher.hpp"

namespace densetune::fixtures {
namespace {

std::string padded(const char* prefix, std::size_t i, int width = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

std::vector<std::string> make_vocabulary(std::size_t n, SplitMix64& rng) {
  static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < n) {
    std::string w;
    const std::size_t len = 3 + rng.index(5);
    for (std::size_t i = 0; i < len; ++i) w.push_back(kLetters[rng.index(26)]);
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

// Case and punctuation noise that normalization removes.
std::string noisy_join(std::span<const std::string> words, SplitMix64& rng) {
  static constexpr const char* kPunct[] = {",", ".", "!", "?", ";", "--", "\xE2\x80\x94"};
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += rng.uniform() < 0.3 ? "  " : " ";
    std::string w = words[i];
    if (rng.uniform() < 0.3) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    out += w;
    if (rng.uniform() < 0.2) out += kPunct[rng.index(7)];
  }
  return out;
}

void gaussian(std::span<double> out, SplitMix64& rng, double scale = 1.0) {
  for (auto& x : out) x = scale * rng.normal();
}

std::vector<float> to_float(std::span<const double> v) { return {v.begin(), v.end()}; }

// Unit vector at cosine `c` to unit vector `axis`.
std::vector<float> at_cosine(std::span<const double> axis, double c, SplitMix64& rng) {
  std::vector<double> u(axis.size());
  gaussian(u, rng);
  double along = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) along += u[i] * axis[i];
  double norm = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] -= along * axis[i];
    norm += u[i] * u[i];
  }
  norm = std::sqrt(norm);
  const double s = std::sqrt(1.0 - c * c);
  std::vector<float> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<float>(c * axis[i] + s * u[i] / norm);
  return out;
}

std::vector<double> unit(std::size_t dim, SplitMix64& rng) {
  std::vector<double> v(dim);
  gaussian(v, rng);
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

corpus::Corpus random_corpus(std::size_t n, std::uint64_t seed, double planted_fraction, std::size_t min_words,
                             std::size_t max_words, std::size_t vocabulary) {
  if (min_words == 0 || max_words < min_words) throw UsageError("random_corpus: bad word-count range");
  SplitMix64 rng(seed);
  const auto vocab = make_vocabulary(vocabulary, rng);
  corpus::Corpus out;
  std::vector<std::vector<std::string>> words;
  words.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> w;
    if (i > 0 && rng.uniform() < planted_fraction) {
      const auto& src = words[rng.index(i)];
      const std::size_t len = 1 + rng.index(src.size());
      const std::size_t start = rng.index(src.size() - len + 1);
      w.assign(src.begin() + static_cast<std::ptrdiff_t>(start),
               src.begin() + static_cast<std::ptrdiff_t>(start + len));
    } else {
      const std::size_t len = min_words + rng.index(max_words - min_words + 1);
      for (std::size_t k = 0; k < len; ++k) w.push_back(vocab[rng.index(vocab.size())]);
    }
    out.add(padded("doc", i, 6), noisy_join(w, rng));
    words.push_back(std::move(w));
  }
  return out;
}

embeddings::EmbeddingStore random_store(std::size_t count, std::size_t dim, std::uint64_t seed,
                                        const std::string& prefix) {
  SplitMix64 rng(seed);
  embeddings::EmbeddingStore store(dim);
  std::vector<float> v(dim);
  for (std::size_t i = 0; i < count; ++i) {
    for (auto& x : v) x = static_cast<float>(rng.normal());
    store.add(prefix + std::to_string(i), v);
  }
  return store;
}

FilterFixture filter_fixture(std::uint64_t seed) {
  constexpr std::size_t kDim = 16;
  constexpr std::size_t kPassages = 200;
  SplitMix64 rng(seed);
  FilterFixture fx;
  fx.query_embs = embeddings::EmbeddingStore(kDim);
  fx.passage_embs = embeddings::EmbeddingStore(kDim);

  std::vector<std::vector<double>> base;
  for (std::size_t i = 0; i < kPassages; ++i) {
    base.push_back(unit(kDim, rng));
    fx.passage_embs.add("p" + std::to_string(i), to_float(base.back()));
  }
  for (std::size_t i = 0; i < 50; ++i) {
    const std::string qid = "q" + std::to_string(i);
    const std::size_t src = 4 * i;
    const std::string pid = "p" + std::to_string(src);
    fx.queries.push_back({qid, "query " + std::to_string(i), pid, querygen::QueryType::question});
    std::vector<double> axis = base[src];
    if (i >= 25 && i < 40) {
      // Points away from the source: it ranks last.
      for (auto& x : axis) x = -x;
      fx.expect_stage1.push_back(qid);
    } else if (i >= 40) {
      // A near-twin of the source that the teacher prefers.
      const std::string rival = "r" + std::to_string(i);
      fx.passage_embs.add(rival, at_cosine(base[src], 0.99, rng));
      fx.teacher.add(qid, rival, 0.9);
      fx.expect_stage2.push_back(qid);
    } else {
      fx.expect_kept.push_back(qid);
    }
    fx.query_embs.add(qid, at_cosine(axis, 0.995, rng));
  }
  for (const auto& q : fx.queries) {
    for (std::size_t i = 0; i < kPassages; ++i) {
      const std::string pid = "p" + std::to_string(i);
      const double s = pid == q.source_passage_id ? 0.6 : 0.3 * rng.uniform();
      fx.teacher.add(q.query_id, pid, s);
    }
  }
  for (std::size_t i = 40; i < 50; ++i) {
    for (std::size_t j = 40; j < 50; ++j) {
      if (i != j) fx.teacher.add("q" + std::to_string(j), "r" + std::to_string(i), 0.3 * rng.uniform());
    }
  }
  for (std::size_t j = 0; j < 40; ++j) {
    for (std::size_t i = 40; i < 50; ++i) {
      fx.teacher.add("q" + std::to_string(j), "r" + std::to_string(i), 0.3 * rng.uniform());
    }
  }
  return fx;
}

DenoiseFixture denoise_fixture(std::uint64_t seed) {
  constexpr std::size_t kDim = 16;
  SplitMix64 rng(seed);
  DenoiseFixture fx;
  fx.query_id = "q";
  fx.positive_id = "pos";
  fx.query_embs = embeddings::EmbeddingStore(kDim);
  fx.passage_embs = embeddings::EmbeddingStore(kDim);
  const auto axis = unit(kDim, rng);
  fx.query_embs.add(fx.query_id, to_float(axis));
  fx.passage_embs.add(fx.positive_id, at_cosine(axis, 0.999, rng));
  fx.teacher.add(fx.query_id, fx.positive_id, 0.9);
  for (std::size_t i = 1; i <= 5; ++i) {
    const std::string id = "dup" + std::to_string(i);
    fx.passage_embs.add(id, at_cosine(axis, 0.995 - 0.002 * static_cast<double>(i), rng));
    fx.teacher.add(fx.query_id, id, 0.85 + 0.008 * static_cast<double>(i));
    fx.near_duplicates.push_back(id);
    fx.ranked_candidates.push_back(id);
  }
  for (std::size_t r = 1; r <= 60; ++r) {
    const std::string id = padded("c", r, 2);
    fx.passage_embs.add(id, at_cosine(axis, 0.95 - 0.014 * static_cast<double>(r - 1), rng));
    fx.teacher.add(fx.query_id, id, 0.3 * rng.uniform());
    fx.ranked_candidates.push_back(id);
  }
  return fx;
}

Task make_task(const TaskConfig& cfg) {
  const std::size_t clustered = cfg.topics * cfg.topic_size;
  if (cfg.topics == 0 || cfg.topic_size < 2) throw UsageError("make_task: need topics of at least 2 passages");
  if (clustered > cfg.passages) throw UsageError("make_task: topics * topic_size exceeds passages");
  if (cfg.queries > clustered) throw UsageError("make_task: more queries than clustered passages");
  if (cfg.eval_queries >= cfg.queries) throw UsageError("make_task: eval_queries must be < queries");
  if (cfg.planted_substrings > cfg.passages - clustered) {
    throw UsageError("make_task: planted_substrings exceeds the distractor count");
  }
  const std::size_t T = cfg.topic_dims, S = cfg.style_dims, N = cfg.nuisance_dims;
  const std::size_t dim = T + S + N;
  SplitMix64 rng(cfg.seed);
  const auto vocab = make_vocabulary(3000, rng);

  Task task;
  task.passage_embs = embeddings::EmbeddingStore(dim);
  task.query_embs = embeddings::EmbeddingStore(dim);

  auto compose = [&](std::span<const double> topic, std::span<const double> style) {
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < T; ++i) v[i] = static_cast<float>(cfg.topic_scale * topic[i]);
    for (std::size_t i = 0; i < S; ++i) v[T + i] = static_cast<float>(cfg.style_scale * style[i]);
    for (std::size_t i = 0; i < N; ++i) v[T + S + i] = static_cast<float>(cfg.nuisance_scale * rng.normal());
    return v;
  };
  auto noisy = [&](std::span<const double> base, double sd) {
    std::vector<double> out(base.begin(), base.end());
    for (auto& x : out) x += sd * rng.normal();
    return out;
  };
  auto fresh = [&](std::size_t n) {
    std::vector<double> v(n);
    gaussian(v, rng);
    return v;
  };

  // Passage i < clustered belongs to topic i / topic_size; the rest are distractors.
  std::vector<std::vector<double>> topics, member_style;
  std::vector<std::vector<std::string>> texts;
  for (std::size_t c = 0; c < cfg.topics; ++c) topics.push_back(fresh(T));
  for (std::size_t i = 0; i < cfg.passages; ++i) {
    const bool member = i < clustered;
    const auto topic = member ? noisy(topics[i / cfg.topic_size], cfg.member_noise) : fresh(T);
    auto style = fresh(S);
    task.passage_embs.add(padded("d", i), compose(topic, style));
    member_style.push_back(std::move(style));
    std::vector<std::string> words;
    const std::size_t len = 25 + rng.index(20);
    for (std::size_t k = 0; k < len; ++k) words.push_back(vocab[rng.index(vocab.size())]);
    texts.push_back(std::move(words));
  }

  // Distractors whose text is a fragment of another passage, for dedup to find.
  for (std::size_t i = 0; i < cfg.planted_substrings; ++i) {
    const std::size_t victim = clustered + i;
    const std::size_t host = rng.index(clustered);
    const auto& src = texts[host];
    const std::size_t len = 5 + rng.index(10);
    const std::size_t start = rng.index(src.size() - len + 1);
    texts[victim].assign(src.begin() + static_cast<std::ptrdiff_t>(start),
                         src.begin() + static_cast<std::ptrdiff_t>(start + len));
  }
  for (std::size_t i = 0; i < cfg.passages; ++i) {
    std::string text;
    for (const auto& w : texts[i]) text += (text.empty() ? "" : " ") + w;
    task.corpus.add(task.passage_embs.id(i), text);
  }

  static constexpr querygen::QueryType kTypes[] = {querygen::QueryType::question, querygen::QueryType::claim,
                                                   querygen::QueryType::title, querygen::QueryType::keywords,
                                                   querygen::QueryType::user_search};
  const std::size_t train_count = cfg.queries - cfg.eval_queries;
  std::vector<std::string> train_ids;
  for (std::size_t q = 0; q < cfg.queries; ++q) {
    // Round-robin over topics, so every topic has training and held-out queries.
    const std::size_t topic = q % cfg.topics;
    const std::size_t source = topic * cfg.topic_size + q / cfg.topics;
    const std::string qid = padded("q", q);
    const std::string& sid = task.passage_embs.id(source);
    const bool train = q < train_count;
    const auto style = train ? noisy(member_style[source], cfg.query_noise) : fresh(S);
    task.query_embs.add(qid, compose(noisy(topics[topic], cfg.query_noise), style));
    for (std::size_t m = 0; m < cfg.topic_size; ++m) {
      const std::size_t pid = topic * cfg.topic_size + m;
      task.all_qrels.add(qid, task.passage_embs.id(pid), pid == source ? 3 : 2);
    }
    if (train) {
      const auto& src = texts[source];
      const std::size_t len = 4 + rng.index(8);
      const std::size_t start = rng.index(src.size() - len + 1);
      std::string text;
      for (std::size_t k = start; k < start + len; ++k) text += (text.empty() ? "" : " ") + src[k];
      task.train_queries.push_back({qid, text, sid, kTypes[q % 5]});
      train_ids.push_back(qid);
    } else {
      task.eval_query_ids.push_back(qid);
      for (const auto& [pid, grade] : task.all_qrels.queries().find(qid)->second) {
        task.eval_qrels.add(qid, pid, grade);
      }
    }
  }

  // The oracle teacher sees topic relevance only: judged pairs keep their
  // grade, every other retrieved pair is judged 0.
  auto judged_pool = [&](std::span<const std::string> ids, std::size_t depth, bool with_source) {
    eval::Qrels pool;
    const auto results = embeddings::top_k_batch(task.query_embs, task.passage_embs, depth, Exec::parallel, ids);
    for (const auto& r : results) {
      std::set<std::string> pids;
      for (const auto& h : r.ranked) pids.insert(h.passage_id);
      if (with_source) {
        for (const auto& [pid, grade] : task.all_qrels.queries().find(r.query_id)->second) {
          if (grade == 3) pids.insert(pid);
        }
      }
      for (const auto& pid : pids) pool.add(r.query_id, pid, task.all_qrels.grade(r.query_id, pid));
    }
    return pool;
  };
  // Dedup removes at most the planted passages, so the extra depth keeps every
  // post-dedup retrieval inside the judged pools.
  const std::size_t slack = cfg.planted_substrings;
  task.raw_teacher = teacher::oracle_teacher(judged_pool(train_ids, cfg.teacher_depth + slack, true), cfg.seed + 1,
                                             cfg.teacher_noise_sd);
  task.eval_teacher = teacher::oracle_teacher(judged_pool(task.eval_query_ids, 100 + slack, false), cfg.seed + 2,
                                              cfg.teacher_noise_sd);
  return task;
}

trainer::TrainConfig task_train_config() {
  trainer::TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.queries_per_batch = 32;
  cfg.chunk_size = 16;
  return cfg;
}

std::vector<negatives::MiningRequest> mining_requests(const Task& task) {
  std::vector<negatives::MiningRequest> out;
  for (const auto& q : task.train_queries) out.push_back({q.query_id, q.source_passage_id});
  return out;
}

}  // namespace densetune::fixtures
