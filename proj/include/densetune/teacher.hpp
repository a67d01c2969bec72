#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "densetune/eval.hpp"
#include "densetune/scores.hpp"

namespace densetune::teacher {

using RawScoreTable = ScoreTable;

/// Scores in [0, 1] with the clipping bounds used to produce them.
struct NormalizedScoreTable {
  ScoreTable scores;
  double lo = 0.0;
  double hi = 1.0;
};

/// Percentile with linear interpolation between closest ranks ("inclusive"):
/// h = (n - 1) * q, result = x[floor h] + (h - floor h) * (x[floor h + 1] - x[floor h])
/// over the ascending sample x, for q in [0, 1].
double percentile_inclusive(std::span<const double> sorted, double q);

/// Global min-max normalization between the 1st and 99th percentiles of all
/// raw scores pooled together, clipped to [0, 1]. Raises NumericError when the
/// two percentiles coincide.
NormalizedScoreTable normalize_scores(const RawScoreTable& raw);

/// Stand-in teacher: grade + noise_sd * N(0, 1) for every judged pair.
/// Pairs are visited in (query_id, passage_id) order, one SplitMix64 normal
/// (two uniform draws) per pair, from a generator seeded with `noise_seed`.
/// With noise_sd == 0 the scores equal the grades exactly and no draws are made.
RawScoreTable oracle_teacher(const eval::Qrels& ground_truth, std::uint64_t noise_seed, double noise_sd);

/// JSON-Lines {"query_id", "passage_id", "score"}.
RawScoreTable load_raw_scores(const std::filesystem::path& path);
void write_raw_scores(const std::filesystem::path& path, const RawScoreTable& table);
/// Same records preceded by a header line {"lo", "hi"}.
NormalizedScoreTable load_normalized_scores(const std::filesystem::path& path);
void write_normalized_scores(const std::filesystem::path& path, const NormalizedScoreTable& table);

}  // namespace densetune::teacher
