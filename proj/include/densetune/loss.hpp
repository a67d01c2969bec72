#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "densetune/exec.hpp"

namespace densetune::loss {

struct LossConfig {
  double tau_student = 0.05;
  double tau_teacher = 0.3;
  double tau_contrastive = 0.01;
  double contrastive_weight = 0.1;
  /// Weight on the listwise term; 0 leaves a contrastive-only objective.
  double distill_weight = 1.0;
  std::size_t K = 19;

  /// Raises UsageError unless every temperature is positive and weights are non-negative.
  void validate() const;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Every score the two losses read, for a batch of n queries with K mined
/// negatives each. Passage p_j is query j's positive; p_jk its k-th negative.
///
///   student_pos[i]                 s(q_i, p_i)    listwise term
///   student_neg(i, k)              s(q_i, p_ik)   listwise term
///   student_cross(i, j)            s(q_i, p_j)    contrastive term
///   student_cross_neg(i, j*K + k)  s(q_i, p_jk)   contrastive term
///   teacher_pos[i], teacher_neg(i, k)             normalized teacher scores
///
/// The listwise and contrastive terms read disjoint fields, so the diagonal of
/// student_cross duplicates student_pos; gradients are reported per field.
struct BatchScores {
  std::size_t n = 0;
  std::size_t K = 0;
  std::vector<double> student_pos;
  Matrix student_neg;
  Matrix student_cross;
  Matrix student_cross_neg;
  std::vector<double> teacher_pos;
  Matrix teacher_neg;

  static BatchScores zeros(std::size_t n, std::size_t K);
  /// Raises DataError on inconsistent shapes.
  void validate() const;
};

/// Gradients with the shape of BatchScores' student fields.
struct ScoreGrads {
  std::vector<double> student_pos;
  Matrix student_neg;
  Matrix student_cross;
  Matrix student_cross_neg;

  static ScoreGrads zeros(std::size_t n, std::size_t K);
  /// this += weight * other
  void add_scaled(const ScoreGrads& other, double weight);
};

struct LossResult {
  double loss = 0.0;
  ScoreGrads grads;
  /// Unaveraged per-query terms, in batch order.
  std::vector<double> per_query;
};

/// Softmax of scores / tau with max subtraction. Raises NumericError on a
/// non-finite score and UsageError on tau <= 0.
std::vector<double> listwise_distributions(std::span<const double> scores, double tau);

/// Mean over queries of KL(teacher || student) between the softmax over
/// [positive, negatives] at tau_teacher and tau_student.
LossResult listwise_kl_loss(const BatchScores& batch, const LossConfig& cfg, Exec exec = Exec::serial);

/// -(1/n) sum_i log( e^{s(q_i,p_i)/tau} / sum_j (e^{s(q_i,p_j)/tau} + sum_k e^{s(q_i,p_jk)/tau}) )
/// over every in-batch positive and every in-batch hard negative.
LossResult infonce_loss(const BatchScores& batch, const LossConfig& cfg, Exec exec = Exec::serial);

/// distill_weight * listwise + contrastive_weight * InfoNCE.
LossResult combined_loss(const BatchScores& batch, const LossConfig& cfg, Exec exec = Exec::serial);

/// Raw (unnormalized) embeddings of one batch. Passage slot j < n holds p_j;
/// slot n + j*K + k holds p_jk. Teacher scores as in BatchScores.
struct BatchEmbeddings {
  std::size_t n = 0;
  std::size_t K = 0;
  Matrix queries;   // n x dim
  Matrix passages;  // n (K + 1) x dim
  std::vector<double> teacher_pos;
  Matrix teacher_neg;

  std::size_t positive_slot(std::size_t j) const { return j; }
  std::size_t negative_slot(std::size_t j, std::size_t k) const { return n + j * K + k; }
};

/// Cosine scores for every field of BatchScores.
BatchScores score_batch(const BatchEmbeddings& batch, Exec exec = Exec::serial);

struct EmbeddingGrads {
  Matrix queries;
  Matrix passages;
};

/// Chain rule through the cosine, d cos(u, v) / du = v / (|u||v|) - cos(u, v) u / |u|^2
/// (and symmetrically for v), accumulated over every score an embedding enters.
/// Raises NumericError on a zero-norm embedding.
EmbeddingGrads backprop_scores_to_embeddings(const ScoreGrads& grads, const Matrix& queries, const Matrix& passages,
                                             std::size_t K, Exec exec = Exec::serial);

struct EmbeddingLoss {
  double loss = 0.0;
  double distill = 0.0;
  double contrastive = 0.0;
  EmbeddingGrads grads;
  double min_score = 0.0;
  double max_score = 0.0;
};

/// combined_loss followed by backprop_scores_to_embeddings, computed row by row
/// without materializing the n x n(K + 1) score matrix: one pass over queries
/// collects each row's log-normalizer, a second pass over passage slots
/// accumulates their gradients. Memory is O(n (K + 1) dim).
EmbeddingLoss combined_loss_embeddings(const BatchEmbeddings& batch, const LossConfig& cfg,
                                       Exec exec = Exec::parallel);

}  // namespace densetune::loss
