#include "densetune/adapter.hpp"

#include <bit>
#include <cmath>

#include "densetune/error.hpp"

namespace densetune::trainer {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

AdapterModel::AdapterModel(std::size_t dim) : dim_(dim), params_(dim * dim + dim, 0.0) {
  if (dim == 0) throw UsageError("adapter dimension must be positive");
  for (std::size_t i = 0; i < dim; ++i) params_[i * dim + i] = 1.0;
}

void AdapterModel::forward(std::span<const float> input, std::span<double> raw_out) const {
  const auto w = weights();
  const auto b = bias();
  for (std::size_t r = 0; r < dim_; ++r) {
    double acc = b[r];
    const double* wr = w.data() + r * dim_;
    for (std::size_t c = 0; c < dim_; ++c) acc += wr[c] * static_cast<double>(input[c]);
    raw_out[r] = acc;
  }
}

void AdapterModel::accumulate_grad(std::span<const float> input, std::span<const double> raw_grad,
                                   std::span<double> param_grad) const {
  for (std::size_t r = 0; r < dim_; ++r) {
    const double g = raw_grad[r];
    double* gr = param_grad.data() + r * dim_;
    for (std::size_t c = 0; c < dim_; ++c) gr[c] += g * static_cast<double>(input[c]);
    param_grad[dim_ * dim_ + r] += g;
  }
}

embeddings::EmbeddingStore apply_adapter(const AdapterModel& model, const embeddings::EmbeddingStore& store,
                                         Exec exec) {
  if (store.dim() != model.dim()) {
    throw DataError("apply_adapter: store dimension " + std::to_string(store.dim()) + " differs from adapter " +
                    std::to_string(model.dim()));
  }
  const std::size_t dim = model.dim();
  std::vector<float> mapped(store.size() * dim);
  for_each_index(store.size(), exec, [&](std::size_t i) {
    std::vector<double> raw(dim);
    model.forward(store.row(i), raw);
    double sq = 0.0;
    for (double x : raw) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError("apply_adapter: degenerate output for " + store.id(i));
    }
    for (std::size_t c = 0; c < dim; ++c) mapped[i * dim + c] = static_cast<float>(raw[c] / norm);
  });
  embeddings::EmbeddingStore out(dim);
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.add(store.id(i), std::span<const float>(mapped.data() + i * dim, dim));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const AdapterModel& model, std::uint64_t seed,
                     const json& config) {
  auto out = open_output(path, std::ios::binary);
  const json header{{"dim", model.dim()}, {"format_version", kCheckpointFormatVersion}, {"seed", seed}, {"config", config}};
  out << header.dump() << '\n';
  for (double p : model.params()) {
    const float f = static_cast<float>(p);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty checkpoint");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error&) {
    throw DataError(path.string() + ": malformed checkpoint header");
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw DataError(path.string() + ": unsupported checkpoint format_version");
  }
  const auto dim = header.value("dim", std::size_t{0});
  AdapterModel model(dim);
  for (double& p : model.params()) {
    float f = 0.0f;
    if (!in.read(reinterpret_cast<char*>(&f), sizeof(f))) throw DataError(path.string() + ": truncated checkpoint");
    p = static_cast<double>(f);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes in checkpoint");
  return Checkpoint{std::move(model), std::move(header)};
}

}  // namespace densetune::trainer
