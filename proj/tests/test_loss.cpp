#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "checks.hpp"
#include "densetune/error.hpp"
#include "densetune/loss.hpp"
#include "densetune/rng.hpp"

using namespace densetune;
using namespace densetune::loss;

namespace {

BatchEmbeddings reference_batch() {
  BatchEmbeddings b;
  b.n = 2;
  b.K = 2;
  b.queries = Matrix(2, 3);
  const double q[2][3] = {{1.0, 0.2, -0.3}, {0.1, 0.9, 0.4}};
  for (int i = 0; i < 2; ++i)
    for (int d = 0; d < 3; ++d) b.queries(i, d) = q[i][d];
  const double p[6][3] = {{0.9, 0.1, -0.2}, {0.0, 1.0, 0.5}, {0.3, 0.3, 0.3},
                          {-0.5, 0.2, 0.1}, {0.6, -0.4, 0.2}, {0.2, 0.8, -0.1}};
  b.passages = Matrix(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int d = 0; d < 3; ++d) b.passages(i, d) = p[i][d];
  b.teacher_pos = {0.9, 0.8};
  b.teacher_neg = Matrix(2, 2);
  b.teacher_neg(0, 0) = 0.4;
  b.teacher_neg(0, 1) = 0.1;
  b.teacher_neg(1, 0) = 0.3;
  b.teacher_neg(1, 1) = 0.5;
  return b;
}

LossConfig reference_config() {
  LossConfig cfg;
  cfg.K = 2;
  cfg.tau_contrastive = 0.2;
  return cfg;
}

const double kRefGradQ[2][3] = {{-0.030986964790336025, -1.1020248873322454, -0.837973140855951},
                                {-1.5647431848475541, -0.046389278039026705, 0.49556167179969934}};
const double kRefGradP[6][3] = {{-0.05186971064498014, 0.17593147410626098, -0.1454479608492789},
                                {0.2642317896099844, 0.05278992304839836, -0.10557984609679605},
                                {-1.9194795213404894, 0.31334642859558476, 1.606133092744905},
                                {-0.1708397202605716, -0.493255148930324, 0.13231169655778893},
                                {-0.5341192955646599, -1.200148539405042, -0.7979391921161043},
                                {0.23196461605347155, -0.19215360560649208, -1.0732996127449907}};

}  // namespace

TEST_CASE("softmax example and normalization") {
  const std::vector<double> s{2, 1, 0};
  const auto p = listwise_distributions(s, 1.0);
  CHECK(p[0] == doctest::Approx(0.6652).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(p[2] == doctest::Approx(0.0900).epsilon(1e-3));
  SplitMix64 g(1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(1 + g.index(30));
    for (auto& x : v) x = g.uniform(-50, 50);
    const auto d = listwise_distributions(v, 0.01 + g.uniform());
    CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) <= 1e-9);
  }
  const std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS_AS(listwise_distributions(bad, 1.0), NumericError);
  CHECK_THROWS_AS(listwise_distributions(s, 0.0), UsageError);
}

TEST_CASE("KL vanishes for matched distributions") {
  SplitMix64 g(2);
  LossConfig cfg;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + g.index(8), K = 1 + g.index(6);
    auto b = checks::random_scores(g, n, K);
    for (std::size_t i = 0; i < n; ++i) {
      b.student_pos[i] = b.teacher_pos[i] * cfg.tau_student / cfg.tau_teacher;
      for (std::size_t k = 0; k < K; ++k) b.student_neg(i, k) = b.teacher_neg(i, k) * cfg.tau_student / cfg.tau_teacher;
    }
    CHECK(std::abs(listwise_kl_loss(b, cfg).loss) <= 1e-12);
  }
}

TEST_CASE("reference batch matches autograd") {
  const auto b = reference_batch();
  const auto cfg = reference_config();
  const auto s = score_batch(b);
  CHECK(listwise_kl_loss(s, cfg).loss == doctest::Approx(2.9490876703780526).epsilon(1e-12));
  CHECK(infonce_loss(s, cfg).loss == doctest::Approx(0.4558280619445032).epsilon(1e-12));
  const auto combined = combined_loss(s, cfg);
  CHECK(combined.loss == doctest::Approx(2.994670476572503).epsilon(1e-12));
  const auto g = backprop_scores_to_embeddings(combined.grads, b.queries, b.passages, b.K);
  const auto fused = combined_loss_embeddings(b, cfg, Exec::serial);
  CHECK(fused.loss == doctest::Approx(2.994670476572503).epsilon(1e-12));
  for (int i = 0; i < 2; ++i)
    for (int d = 0; d < 3; ++d) {
      CHECK(g.queries(i, d) == doctest::Approx(kRefGradQ[i][d]).epsilon(1e-10));
      CHECK(fused.grads.queries(i, d) == doctest::Approx(kRefGradQ[i][d]).epsilon(1e-10));
    }
  for (int i = 0; i < 6; ++i)
    for (int d = 0; d < 3; ++d) {
      CHECK(g.passages(i, d) == doctest::Approx(kRefGradP[i][d]).epsilon(1e-10));
      CHECK(fused.grads.passages(i, d) == doctest::Approx(kRefGradP[i][d]).epsilon(1e-10));
    }
}

TEST_CASE("analytic gradients match central differences") {
  const auto sweep = checks::gradient_sweep(100, 7, LossConfig{});
  CHECK(sweep.batches == 100);
  CHECK(sweep.worst < 1e-6);
  auto warm = LossConfig{};
  warm.tau_student = 0.5;
  warm.tau_contrastive = 0.3;
  warm.contrastive_weight = 0.7;
  warm.distill_weight = 0.4;
  CHECK(checks::gradient_sweep(30, 8, warm).worst < 1e-6);
}

TEST_CASE("combined loss is the weighted sum") {
  SplitMix64 g(4);
  LossConfig cfg;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + g.index(8), K = 1 + g.index(19);
    cfg.K = K;
    const auto b = checks::random_scores(g, n, K);
    const double kl = listwise_kl_loss(b, cfg).loss;
    const double nce = infonce_loss(b, cfg).loss;
    CHECK(std::abs(combined_loss(b, cfg).loss - (kl + 0.1 * nce)) <= 1e-12);
  }
}

TEST_CASE("losses are shift invariant per row and permutation invariant over negatives") {
  SplitMix64 g(5);
  LossConfig cfg;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + g.index(6), K = 2 + g.index(4);
    cfg.K = K;
    const auto b = checks::random_scores(g, n, K);
    auto shifted = b;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = g.uniform(-0.5, 0.5);
      shifted.student_pos[i] += c;
      for (std::size_t k = 0; k < K; ++k) shifted.student_neg(i, k) += c;
      for (auto& v : shifted.student_cross.row(i)) v += c;
      for (auto& v : shifted.student_cross_neg.row(i)) v += c;
    }
    CHECK(listwise_kl_loss(shifted, cfg).loss == doctest::Approx(listwise_kl_loss(b, cfg).loss).epsilon(1e-9));
    CHECK(infonce_loss(shifted, cfg).loss == doctest::Approx(infonce_loss(b, cfg).loss).epsilon(1e-9));

    auto permuted = b;
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(permuted.student_neg(i, 0), permuted.student_neg(i, K - 1));
      std::swap(permuted.teacher_neg(i, 0), permuted.teacher_neg(i, K - 1));
    }
    for (std::size_t i = 0; i < n; ++i) std::swap(permuted.student_cross_neg(i, 0), permuted.student_cross_neg(i, 1));
    CHECK(listwise_kl_loss(permuted, cfg).loss == doctest::Approx(listwise_kl_loss(b, cfg).loss).epsilon(1e-12));
    CHECK(infonce_loss(permuted, cfg).loss == doctest::Approx(infonce_loss(b, cfg).loss).epsilon(1e-12));
  }
}

TEST_CASE("fused route equals the materialized route") {
  SplitMix64 g(6);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + g.index(12), K = 1 + g.index(5), dim = 2 + g.index(10);
    LossConfig cfg;
    cfg.K = K;
    const auto b = checks::random_embeddings(g, n, K, dim);
    const auto scores = score_batch(b);
    const auto ref = combined_loss(scores, cfg);
    const auto ref_grads = backprop_scores_to_embeddings(ref.grads, b.queries, b.passages, K);
    for (auto exec : {Exec::serial, Exec::parallel}) {
      const auto fused = combined_loss_embeddings(b, cfg, exec);
      CHECK(fused.loss == doctest::Approx(ref.loss).epsilon(1e-12));
      for (std::size_t i = 0; i < ref_grads.queries.data().size(); ++i)
        CHECK(fused.grads.queries.data()[i] == doctest::Approx(ref_grads.queries.data()[i]).epsilon(1e-9));
      for (std::size_t i = 0; i < ref_grads.passages.data().size(); ++i)
        CHECK(fused.grads.passages.data()[i] == doctest::Approx(ref_grads.passages.data()[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("zero-norm embeddings and bad configs raise") {
  auto b = reference_batch();
  for (auto& v : b.queries.row(0)) v = 0.0;
  const auto cfg = reference_config();
  CHECK_THROWS_AS(combined_loss_embeddings(b, cfg), NumericError);
  LossConfig bad;
  bad.tau_student = 0.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = LossConfig{};
  bad.contrastive_weight = -1;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}
