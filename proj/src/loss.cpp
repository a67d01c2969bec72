#include "densetune/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "densetune/error.hpp"

namespace densetune::loss {

void LossConfig::validate() const {
  if (!(tau_student > 0.0 && tau_teacher > 0.0 && tau_contrastive > 0.0)) {
    throw UsageError("loss temperatures must be positive");
  }
  if (!(contrastive_weight >= 0.0 && distill_weight >= 0.0)) {
    throw UsageError("loss weights must be non-negative");
  }
}

BatchScores BatchScores::zeros(std::size_t n, std::size_t K) {
  BatchScores b;
  b.n = n;
  b.K = K;
  b.student_pos.assign(n, 0.0);
  b.student_neg = Matrix(n, K);
  b.student_cross = Matrix(n, n);
  b.student_cross_neg = Matrix(n, n * K);
  b.teacher_pos.assign(n, 0.0);
  b.teacher_neg = Matrix(n, K);
  return b;
}

void BatchScores::validate() const {
  const bool ok = student_pos.size() == n && student_neg.rows() == n && student_neg.cols() == K &&
                  student_cross.rows() == n && student_cross.cols() == n && student_cross_neg.rows() == n &&
                  student_cross_neg.cols() == n * K && teacher_pos.size() == n && teacher_neg.rows() == n &&
                  teacher_neg.cols() == K;
  if (!ok) throw DataError("batch scores have inconsistent shapes");
}

ScoreGrads ScoreGrads::zeros(std::size_t n, std::size_t K) {
  return ScoreGrads{std::vector<double>(n, 0.0), Matrix(n, K), Matrix(n, n), Matrix(n, n * K)};
}

void ScoreGrads::add_scaled(const ScoreGrads& other, double weight) {
  auto axpy = [weight](std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
  };
  axpy(student_pos, other.student_pos);
  axpy(student_neg.data(), other.student_neg.data());
  axpy(student_cross.data(), other.student_cross.data());
  axpy(student_cross_neg.data(), other.student_cross_neg.data());
}

namespace {

/// log(sum exp(x / tau)) with max subtraction.
double log_sum_exp(std::span<const double> scores, double tau) {
  double top = -std::numeric_limits<double>::infinity();
  for (double s : scores) top = std::max(top, s / tau);
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s / tau - top);
  return top + std::log(acc);
}

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite score");
  }
}

double finite_or_throw(double value, const char* what) {
  if (!std::isfinite(value)) throw NumericError(std::string(what) + ": non-finite loss");
  return value;
}

/// KL(p_t || p_s) for one row and d/ds of it (unscaled by the batch mean).
double listwise_row(std::span<const double> student, std::span<const double> teacher, const LossConfig& cfg,
                    std::span<double> grad) {
  const double lse_s = log_sum_exp(student, cfg.tau_student);
  const double lse_t = log_sum_exp(teacher, cfg.tau_teacher);
  double kl = 0.0;
  for (std::size_t j = 0; j < student.size(); ++j) {
    const double log_pt = teacher[j] / cfg.tau_teacher - lse_t;
    const double log_ps = student[j] / cfg.tau_student - lse_s;
    const double pt = std::exp(log_pt);
    if (pt > 0.0) kl += pt * (log_pt - log_ps);
    grad[j] = (std::exp(log_ps) - pt) / cfg.tau_student;
  }
  return kl;
}

double sum_in_order(std::span<const double> xs) {
  double total = 0.0;
  for (double x : xs) total += x;
  return total;
}

}  // namespace

std::vector<double> listwise_distributions(std::span<const double> scores, double tau) {
  if (!(tau > 0.0)) throw UsageError("listwise_distributions: tau must be positive");
  require_finite(scores, "listwise_distributions");
  const double lse = log_sum_exp(scores, tau);
  std::vector<double> p(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) p[j] = std::exp(scores[j] / tau - lse);
  return p;
}

LossResult listwise_kl_loss(const BatchScores& batch, const LossConfig& cfg, Exec exec) {
  cfg.validate();
  batch.validate();
  if (batch.n == 0) throw DataError("listwise_kl_loss: empty batch");
  const std::size_t n = batch.n, K = batch.K;
  LossResult result{0.0, ScoreGrads::zeros(n, K), std::vector<double>(n, 0.0)};
  for_each_index(n, exec, [&](std::size_t i) {
    std::vector<double> student(K + 1), teacher(K + 1), grad(K + 1);
    student[0] = batch.student_pos[i];
    teacher[0] = batch.teacher_pos[i];
    for (std::size_t k = 0; k < K; ++k) {
      student[k + 1] = batch.student_neg(i, k);
      teacher[k + 1] = batch.teacher_neg(i, k);
    }
    require_finite(student, "listwise_kl_loss");
    require_finite(teacher, "listwise_kl_loss");
    result.per_query[i] = listwise_row(student, teacher, cfg, grad);
    result.grads.student_pos[i] = grad[0] / static_cast<double>(n);
    for (std::size_t k = 0; k < K; ++k) result.grads.student_neg(i, k) = grad[k + 1] / static_cast<double>(n);
  });
  result.loss = finite_or_throw(sum_in_order(result.per_query) / static_cast<double>(n), "listwise_kl_loss");
  return result;
}

LossResult infonce_loss(const BatchScores& batch, const LossConfig& cfg, Exec exec) {
  cfg.validate();
  batch.validate();
  if (batch.n == 0) throw DataError("infonce_loss: empty batch");
  const std::size_t n = batch.n, K = batch.K;
  const double tau = cfg.tau_contrastive;
  const double scale = 1.0 / (tau * static_cast<double>(n));
  LossResult result{0.0, ScoreGrads::zeros(n, K), std::vector<double>(n, 0.0)};
  for_each_index(n, exec, [&](std::size_t i) {
    const auto cross = batch.student_cross.row(i);
    const auto cross_neg = batch.student_cross_neg.row(i);
    require_finite(cross, "infonce_loss");
    require_finite(cross_neg, "infonce_loss");
    double top = -std::numeric_limits<double>::infinity();
    for (double s : cross) top = std::max(top, s / tau);
    for (double s : cross_neg) top = std::max(top, s / tau);
    double acc = 0.0;
    for (double s : cross) acc += std::exp(s / tau - top);
    for (double s : cross_neg) acc += std::exp(s / tau - top);
    const double lse = top + std::log(acc);
    result.per_query[i] = lse - cross[i] / tau;

    auto g_cross = result.grads.student_cross.row(i);
    auto g_neg = result.grads.student_cross_neg.row(i);
    for (std::size_t j = 0; j < n; ++j) g_cross[j] = std::exp(cross[j] / tau - lse) * scale;
    g_cross[i] -= scale;
    for (std::size_t c = 0; c < n * K; ++c) g_neg[c] = std::exp(cross_neg[c] / tau - lse) * scale;
  });
  result.loss = finite_or_throw(sum_in_order(result.per_query) / static_cast<double>(n), "infonce_loss");
  return result;
}

LossResult combined_loss(const BatchScores& batch, const LossConfig& cfg, Exec exec) {
  const auto distill = listwise_kl_loss(batch, cfg, exec);
  const auto contrastive = infonce_loss(batch, cfg, exec);
  LossResult result{0.0, ScoreGrads::zeros(batch.n, batch.K), std::vector<double>(batch.n, 0.0)};
  result.grads.add_scaled(distill.grads, cfg.distill_weight);
  result.grads.add_scaled(contrastive.grads, cfg.contrastive_weight);
  for (std::size_t i = 0; i < batch.n; ++i) {
    result.per_query[i] = cfg.distill_weight * distill.per_query[i] + cfg.contrastive_weight * contrastive.per_query[i];
  }
  result.loss = cfg.distill_weight * distill.loss + cfg.contrastive_weight * contrastive.loss;
  return result;
}

namespace {

struct Normalized {
  Matrix unit;
  std::vector<double> norms;
};

Normalized normalize_rows(const Matrix& m, const char* what) {
  Normalized out{Matrix(m.rows(), m.cols()), std::vector<double>(m.rows())};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double sq = 0.0;
    for (double x : row) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError(std::string(what) + ": zero-norm embedding at row " + std::to_string(r));
    }
    out.norms[r] = norm;
    auto dst = out.unit.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) dst[c] = row[c] / norm;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_batch_embeddings(const BatchEmbeddings& batch) {
  const bool ok = batch.queries.rows() == batch.n && batch.passages.rows() == batch.n * (batch.K + 1) &&
                  batch.passages.cols() == batch.queries.cols() && batch.teacher_pos.size() == batch.n &&
                  batch.teacher_neg.rows() == batch.n && batch.teacher_neg.cols() == batch.K;
  if (!ok) throw DataError("batch embeddings have inconsistent shapes");
  if (batch.n == 0) throw DataError("empty batch");
}

/// Maps the gradient with respect to a unit vector back to its raw vector:
/// (g - (g . x) x) / |raw|.
void unnormalize_grad(std::span<double> grad, std::span<const double> unit, double norm) {
  const double along = dot(grad, unit);
  for (std::size_t c = 0; c < grad.size(); ++c) grad[c] = (grad[c] - along * unit[c]) / norm;
}

}  // namespace

BatchScores score_batch(const BatchEmbeddings& batch, Exec exec) {
  check_batch_embeddings(batch);
  const std::size_t n = batch.n, K = batch.K;
  const auto q = normalize_rows(batch.queries, "score_batch");
  const auto p = normalize_rows(batch.passages, "score_batch");
  BatchScores scores = BatchScores::zeros(n, K);
  scores.teacher_pos = batch.teacher_pos;
  scores.teacher_neg = batch.teacher_neg;
  for_each_index(n, exec, [&](std::size_t i) {
    const auto qi = q.unit.row(i);
    for (std::size_t j = 0; j < n; ++j) scores.student_cross(i, j) = dot(qi, p.unit.row(batch.positive_slot(j)));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < K; ++k) {
        scores.student_cross_neg(i, j * K + k) = dot(qi, p.unit.row(batch.negative_slot(j, k)));
      }
    }
    scores.student_pos[i] = scores.student_cross(i, i);
    for (std::size_t k = 0; k < K; ++k) scores.student_neg(i, k) = scores.student_cross_neg(i, i * K + k);
  });
  return scores;
}

EmbeddingGrads backprop_scores_to_embeddings(const ScoreGrads& grads, const Matrix& queries, const Matrix& passages,
                                             std::size_t K, Exec exec) {
  const std::size_t n = queries.rows();
  const std::size_t slots = passages.rows();
  const std::size_t dim = queries.cols();
  if (slots != n * (K + 1) || passages.cols() != dim || grads.student_pos.size() != n ||
      grads.student_cross.cols() != n || grads.student_cross_neg.cols() != n * K) {
    throw DataError("backprop_scores_to_embeddings: inconsistent shapes");
  }
  const auto q = normalize_rows(queries, "backprop_scores_to_embeddings");
  const auto p = normalize_rows(passages, "backprop_scores_to_embeddings");

  // Total d loss / d cos(q_i, slot s), merging the fields that share a pair.
  Matrix g(n, slots);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g(i, j) = grads.student_cross(i, j);
    for (std::size_t c = 0; c < n * K; ++c) g(i, n + c) = grads.student_cross_neg(i, c);
    g(i, i) += grads.student_pos[i];
    for (std::size_t k = 0; k < K; ++k) g(i, n + i * K + k) += grads.student_neg(i, k);
  }

  EmbeddingGrads out{Matrix(n, dim), Matrix(slots, dim)};
  for_each_index(n, exec, [&](std::size_t i) {
    const auto u = queries.row(i);
    const double nu = q.norms[i];
    auto du = out.queries.row(i);
    for (std::size_t s = 0; s < slots; ++s) {
      if (g(i, s) == 0.0) continue;
      const auto v = passages.row(s);
      const double nv = p.norms[s];
      const double cos = dot(q.unit.row(i), p.unit.row(s));
      for (std::size_t c = 0; c < dim; ++c) du[c] += g(i, s) * (v[c] / (nu * nv) - cos * u[c] / (nu * nu));
    }
  });
  for_each_index(slots, exec, [&](std::size_t s) {
    const auto v = passages.row(s);
    const double nv = p.norms[s];
    auto dv = out.passages.row(s);
    for (std::size_t i = 0; i < n; ++i) {
      if (g(i, s) == 0.0) continue;
      const auto u = queries.row(i);
      const double nu = q.norms[i];
      const double cos = dot(q.unit.row(i), p.unit.row(s));
      for (std::size_t c = 0; c < dim; ++c) dv[c] += g(i, s) * (u[c] / (nu * nv) - cos * v[c] / (nv * nv));
    }
  });
  return out;
}

EmbeddingLoss combined_loss_embeddings(const BatchEmbeddings& batch, const LossConfig& cfg, Exec exec) {
  cfg.validate();
  check_batch_embeddings(batch);
  const std::size_t n = batch.n, K = batch.K;
  const std::size_t slots = n * (K + 1);
  const std::size_t dim = batch.queries.cols();
  const double tau = cfg.tau_contrastive;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double contrastive_scale = cfg.contrastive_weight * inv_n / tau;

  const auto q = normalize_rows(batch.queries, "combined_loss_embeddings");
  const auto p = normalize_rows(batch.passages, "combined_loss_embeddings");

  std::vector<double> lse(n), infonce(n), kl(n), row_min(n), row_max(n);
  Matrix kl_grad(n, K + 1);  // weighted, already divided by n
  EmbeddingGrads out{Matrix(n, dim), Matrix(slots, dim)};

  // Pass 1, per query row: log-normalizer, both loss terms, query gradient.
  for_each_index(n, exec, [&](std::size_t i) {
    const auto qi = q.unit.row(i);
    std::vector<double> row(slots);
    for (std::size_t s = 0; s < slots; ++s) row[s] = dot(qi, p.unit.row(s));
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    row_min[i] = *lo;
    row_max[i] = *hi;
    lse[i] = log_sum_exp(row, tau);
    infonce[i] = lse[i] - row[i] / tau;

    std::vector<double> student(K + 1), teacher(K + 1), grad(K + 1);
    student[0] = row[batch.positive_slot(i)];
    teacher[0] = batch.teacher_pos[i];
    for (std::size_t k = 0; k < K; ++k) {
      student[k + 1] = row[batch.negative_slot(i, k)];
      teacher[k + 1] = batch.teacher_neg(i, k);
    }
    kl[i] = listwise_row(student, teacher, cfg, grad);
    for (std::size_t j = 0; j <= K; ++j) kl_grad(i, j) = cfg.distill_weight * grad[j] * inv_n;

    auto dq = out.queries.row(i);
    for (std::size_t s = 0; s < slots; ++s) {
      double g = contrastive_scale * std::exp(row[s] / tau - lse[i]);
      if (s == i) g -= contrastive_scale;
      if (s == batch.positive_slot(i)) g += kl_grad(i, 0);
      if (s >= n && (s - n) / K == i) g += kl_grad(i, 1 + (s - n) % K);
      const auto ps = p.unit.row(s);
      for (std::size_t c = 0; c < dim; ++c) dq[c] += g * ps[c];
    }
    unnormalize_grad(dq, qi, q.norms[i]);
  });

  // Pass 2, per passage slot: recompute its column of scores and gather.
  for_each_index(slots, exec, [&](std::size_t s) {
    const auto ps = p.unit.row(s);
    const std::size_t owner = s < n ? s : (s - n) / K;
    const std::size_t own_index = s < n ? 0 : 1 + (s - n) % K;
    auto dp = out.passages.row(s);
    for (std::size_t i = 0; i < n; ++i) {
      const auto qi = q.unit.row(i);
      double g = contrastive_scale * std::exp(dot(qi, ps) / tau - lse[i]);
      if (s == i) g -= contrastive_scale;
      if (i == owner) g += kl_grad(i, own_index);
      for (std::size_t c = 0; c < dim; ++c) dp[c] += g * qi[c];
    }
    unnormalize_grad(dp, ps, p.norms[s]);
  });

  EmbeddingLoss result;
  result.distill = sum_in_order(kl) * inv_n;
  result.contrastive = sum_in_order(infonce) * inv_n;
  result.loss = cfg.distill_weight * result.distill + cfg.contrastive_weight * result.contrastive;
  result.min_score = *std::min_element(row_min.begin(), row_min.end());
  result.max_score = *std::max_element(row_max.begin(), row_max.end());
  if (!std::isfinite(result.loss)) {
    throw NumericError("combined_loss_embeddings: non-finite loss (scores in [" + std::to_string(result.min_score) +
                       ", " + std::to_string(result.max_score) + "])");
  }
  result.grads = std::move(out);
  return result;
}

}  // namespace densetune::loss
