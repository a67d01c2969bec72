#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "densetune/embeddings.hpp"
#include "densetune/exec.hpp"
#include "densetune/io.hpp"

namespace densetune::trainer {

/// Square linear map plus bias, v -> normalize(W v + b), shared by queries and
/// passages. Parameters are stored contiguously: W row-major, then b.
class AdapterModel {
 public:
  /// Identity W, zero b.
  explicit AdapterModel(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::span<const double> weights() const { return {params_.data(), dim_ * dim_}; }
  std::span<const double> bias() const { return {params_.data() + dim_ * dim_, dim_}; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  double& weight(std::size_t r, std::size_t c) { return params_[r * dim_ + c]; }
  double& bias(std::size_t r) { return params_[dim_ * dim_ + r]; }

  /// W v + b, before normalization.
  void forward(std::span<const float> input, std::span<double> raw_out) const;
  /// Accumulates d loss / d params for one input given d loss / d raw output.
  void accumulate_grad(std::span<const float> input, std::span<const double> raw_grad,
                       std::span<double> param_grad) const;

  bool operator==(const AdapterModel&) const = default;

 private:
  std::size_t dim_;
  std::vector<double> params_;
};

/// Maps every row through the adapter; ids and order are preserved and the
/// output is unit-norm. Raises DataError on a dimension mismatch.
embeddings::EmbeddingStore apply_adapter(const AdapterModel& model, const embeddings::EmbeddingStore& store,
                                         Exec exec = Exec::parallel);

inline constexpr int kCheckpointFormatVersion = 1;

/// One JSON header line {"dim", "format_version", "seed", "config"} followed
/// by dim * dim + dim little-endian f32: W row-major, then b.
void save_checkpoint(const std::filesystem::path& path, const AdapterModel& model, std::uint64_t seed,
                     const json& config);

struct Checkpoint {
  AdapterModel model;
  json header;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace densetune::trainer
