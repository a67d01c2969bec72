#include "densetune/embeddings.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>

#include "densetune/error.hpp"
#include "densetune/io.hpp"

namespace densetune::embeddings {

static_assert(std::endian::native == std::endian::little,
              "the packed embedding format is little-endian");

namespace {

constexpr std::array<char, 8> kMagic = {'E', 'M', 'B', 'F', '0', '0', '0', '1'};

template <typename T>
double dot(std::span<const T> u, std::span<const T> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return acc;
}

template <typename T>
double cosine_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw DataError("cosine_similarity: dimension mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw NumericError("cosine_similarity: zero-norm embedding");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

bool ranks_before(double score_a, const std::string& id_a, double score_b, const std::string& id_b) {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

}  // namespace

EmbeddingStore::EmbeddingStore(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw DataError("embedding dimension must be positive");
}

void EmbeddingStore::add(std::string id, std::span<const float> vector) {
  if (vector.size() != dim_) {
    throw DataError("embedding " + id + ": dimension " + std::to_string(vector.size()) +
                    " does not match store dimension " + std::to_string(dim_));
  }
  if (index_.contains(id)) throw DataError("duplicate embedding id: " + id);
  const double norm = std::sqrt(dot(vector, vector));
  if (!std::isfinite(norm) || norm == 0.0) {
    throw DataError("embedding " + id + ": zero or non-finite vector");
  }
  if (std::abs(norm - 1.0) > kNormTolerance) warnings_.push_back(id);
  for (float x : vector) data_.push_back(static_cast<float>(static_cast<double>(x) / norm));
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
}

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingStore::at(std::string_view id) const {
  auto row_index = find(id);
  if (!row_index) throw DataError("missing embedding for id: " + std::string(id));
  return row(*row_index);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  return cosine_impl(u, v);
}

double cosine_similarity(std::span<const float> u, std::span<const float> v) {
  return cosine_impl(u, v);
}

RetrievalResult top_k(std::string query_id, std::span<const float> query,
                      const EmbeddingStore& store, std::size_t k, const IdSet* exclude) {
  if (k == 0) throw UsageError("top_k: k must be at least 1");
  if (store.empty()) throw DataError("top_k: empty embedding store");
  if (query.size() != store.dim()) throw DataError("top_k: query " + query_id + " has wrong dimension");
  const double qnorm = std::sqrt(dot(query, query));
  if (qnorm == 0.0) throw NumericError("top_k: zero-norm query embedding " + query_id);

  std::vector<std::size_t> rows;
  rows.reserve(store.size());
  std::vector<double> scores(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (exclude && exclude->contains(store.id(i))) continue;
    scores[i] = dot(query, store.row(i)) / qnorm;
    rows.push_back(i);
  }
  const std::size_t take = std::min(k, rows.size());
  auto before = [&](std::size_t a, std::size_t b) {
    return ranks_before(scores[a], store.id(a), scores[b], store.id(b));
  };
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end(), before);

  RetrievalResult result{std::move(query_id), {}};
  result.ranked.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    result.ranked.push_back(Hit{store.id(rows[r]), scores[rows[r]], r + 1});
  }
  return result;
}

std::vector<RetrievalResult> top_k_batch(const EmbeddingStore& queries,
                                         const EmbeddingStore& passages, std::size_t k,
                                         Exec exec, std::span<const std::string> query_ids) {
  std::vector<std::size_t> rows;
  if (query_ids.empty()) {
    rows.resize(queries.size());
    std::iota(rows.begin(), rows.end(), 0);
  } else {
    for (const auto& id : query_ids) {
      auto row = queries.find(id);
      if (!row) throw DataError("missing embedding for query: " + id);
      rows.push_back(*row);
    }
  }
  if (k == 0) throw UsageError("top_k: k must be at least 1");
  if (passages.empty()) throw DataError("top_k: empty embedding store");

  std::vector<RetrievalResult> results(rows.size());
  const auto n = static_cast<std::int64_t>(rows.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
      results[i] = top_k(queries.id(rows[i]), queries.row(rows[i]), passages, k);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      results[i] = top_k(queries.id(rows[i]), queries.row(rows[i]), passages, k);
    }
  }
  return results;
}

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError(path.string() + ": truncated embedding file");
  }
  return value;
}

EmbeddingStore load_binary(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  auto in = open_input(path, std::ios::binary);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  const auto dim = read_le<std::uint32_t>(in, path);
  const auto count = read_le<std::uint64_t>(in, path);
  if (expected_dim && dim != *expected_dim) {
    throw DataError(path.string() + ": dimension " + std::to_string(dim) + ", expected " +
                    std::to_string(*expected_dim));
  }
  EmbeddingStore store(dim);
  std::vector<float> vec(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto id_len = read_le<std::uint16_t>(in, path);
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw DataError(path.string() + ": truncated embedding file");
    if (!in.read(reinterpret_cast<char*>(vec.data()), static_cast<std::streamsize>(dim * sizeof(float)))) {
      throw DataError(path.string() + ": truncated embedding file at id " + id);
    }
    store.add(std::move(id), vec);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(path.string() + ": trailing bytes after " + std::to_string(count) + " records");
  }
  return store;
}

EmbeddingStore load_jsonl(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  std::optional<EmbeddingStore> store;
  std::vector<float> vec;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    auto id = require_string(obj, "id", line);
    auto it = obj.find("vector");
    if (it == obj.end() || !it->is_array()) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": missing \"vector\" array");
    }
    vec.clear();
    for (const auto& x : *it) {
      if (!x.is_number()) throw DataError(path.string() + ":" + std::to_string(line) + ": non-numeric vector entry");
      vec.push_back(x.get<float>());
    }
    if (!store) {
      const std::size_t dim = expected_dim.value_or(vec.size());
      store.emplace(dim);
    }
    if (vec.size() != store->dim()) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": embedding " + id + " has dimension " +
                      std::to_string(vec.size()) + ", expected " + std::to_string(store->dim()));
    }
    store->add(std::move(id), vec);
  });
  if (!store) throw DataError(path.string() + ": no embeddings");
  return std::move(*store);
}

}  // namespace

EmbeddingStore load_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  std::array<char, 8> head{};
  {
    auto in = open_input(path, std::ios::binary);
    in.read(head.data(), head.size());
    if (in.gcount() == static_cast<std::streamsize>(head.size()) && head == kMagic) {
      return load_binary(path, expected_dim);
    }
  }
  return load_jsonl(path, expected_dim);
}

void write_embeddings_jsonl(const std::filesystem::path& path, const EmbeddingStore& store) {
  auto out = open_output(path);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto row = store.row(i);
    out << dump_line(json{{"id", store.id(i)}, {"vector", std::vector<float>(row.begin(), row.end())}})
        << '\n';
  }
}

void write_embeddings_binary(const std::filesystem::path& path, const EmbeddingStore& store) {
  auto out = open_output(path, std::ios::binary);
  out.write(kMagic.data(), kMagic.size());
  write_le(out, static_cast<std::uint32_t>(store.dim()));
  write_le(out, static_cast<std::uint64_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& id = store.id(i);
    if (id.size() > 0xFFFF) throw DataError("embedding id longer than 65535 bytes: " + id.substr(0, 32));
    write_le(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    const auto row = store.row(i);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

}  // namespace densetune::embeddings
