#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "checks.hpp"
#include "densetune/error.hpp"
#include "densetune/trainer.hpp"
#include "test_util.hpp"

using namespace densetune;
using namespace densetune::trainer;

TEST_CASE("train/dev split sizes and disjointness") {
  const auto f = checks::random_groups(100, 3, 4, 1);
  const auto s = split_train_dev(f.groups, 0.1, 7);
  CHECK(s.train.size() == 90);
  CHECK(s.dev.size() == 10);
  std::set<std::string> seen;
  for (const auto& g : s.train) seen.insert(g.query_id);
  for (const auto& g : s.dev) CHECK(seen.insert(g.query_id).second);
  const auto small = checks::random_groups(11, 3, 4, 2);
  const auto h = split_train_dev(small.groups, 0.5, 7);
  CHECK(h.dev.size() == 5);
  CHECK(h.train.size() == 6);
  const auto again = split_train_dev(f.groups, 0.1, 7);
  for (std::size_t i = 0; i < 10; ++i) CHECK(again.dev[i].query_id == s.dev[i].query_id);
  CHECK_THROWS_AS(split_train_dev(std::span(f.groups).first(9), 0.1, 7), DataError);
  auto dup = f.groups;
  dup[3].query_id = dup[4].query_id;
  CHECK_THROWS_AS(split_train_dev(dup, 0.1, 7), DataError);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.chunk_size = cfg.queries_per_batch + 1;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = TrainConfig{};
  cfg.dev_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  const auto j = to_json(TrainConfig{});
  CHECK(train_config_from_json(j).queries_per_batch == 256);
  CHECK(loss_config_from_json(to_json(loss::LossConfig{})).tau_contrastive == 0.01);
}

TEST_CASE("gradient cache equals the monolithic path") {
  struct Shape {
    std::size_t n, K, dim, chunk;
  };
  for (const auto s : {Shape{1, 1, 2, 1}, Shape{7, 3, 5, 2}, Shape{32, 4, 8, 5}, Shape{64, 19, 16, 16},
                       Shape{200, 4, 12, 64}}) {
    const auto c = checks::compare_gradient_paths(s.n, s.K, s.dim, s.chunk, s.n + s.dim);
    CHECK(c.grad_error < 1e-6);
    CHECK(c.delta_error < 1e-6);
  }
}

TEST_CASE("zero learning rate leaves the adapter at the identity") {
  const auto f = checks::random_groups(60, 3, 6, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.queries_per_batch = 16;
  cfg.chunk_size = 4;
  cfg.max_epochs = 3;
  loss::LossConfig lc;
  lc.K = 3;
  const auto r = train(f.groups, {f.queries, f.passages}, lc, cfg);
  CHECK(r.model == AdapterModel(6));
  for (const auto& e : r.report.epochs) CHECK(std::abs(e.dev_loss - r.report.epochs[0].dev_loss) <= 1e-9);
}

TEST_CASE("epoch zero reports the loss of the untrained adapter") {
  const auto f = checks::random_groups(60, 3, 6, 4);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.queries_per_batch = 16;
  cfg.chunk_size = 8;
  cfg.max_epochs = 4;
  loss::LossConfig lc;
  lc.K = 3;
  const EmbeddingSources src{f.queries, f.passages};
  const auto r = train(f.groups, src, lc, cfg);
  const auto split = split_train_dev(f.groups, cfg.dev_fraction, cfg.seed);
  const AdapterModel identity(6);
  REQUIRE(!r.report.epochs.empty());
  CHECK(r.report.epochs[0].epoch == 0);
  CHECK(r.report.epochs[0].dev_loss == doctest::Approx(evaluate_loss(identity, split.dev, src, lc, cfg)).epsilon(1e-12));
  CHECK(r.report.epochs[0].train_loss ==
        doctest::Approx(evaluate_loss(identity, split.train, src, lc, cfg)).epsilon(1e-12));
  CHECK(r.report.epochs.size() <= cfg.max_epochs + 1);
  double best = r.report.epochs[0].dev_loss;
  for (const auto& e : r.report.epochs) best = std::min(best, e.dev_loss);
  CHECK(r.report.epochs[r.report.best_epoch].dev_loss == best);
  CHECK(!r.report.stopping_reason.empty());
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto f = checks::random_groups(80, 3, 6, 5);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.queries_per_batch = 16;
  cfg.chunk_size = 8;
  cfg.max_epochs = 3;
  loss::LossConfig lc;
  lc.K = 3;
  const auto a = train(f.groups, {f.queries, f.passages}, lc, cfg);
  const auto b = train(f.groups, {f.queries, f.passages}, lc, cfg);
  CHECK(a.model == b.model);
}

TEST_CASE("patience stops after non-improving epochs") {
  const auto f = checks::random_groups(60, 3, 6, 6);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.queries_per_batch = 16;
  cfg.chunk_size = 16;
  cfg.max_epochs = 30;
  cfg.patience = 2;
  loss::LossConfig lc;
  lc.K = 3;
  const auto r = train(f.groups, {f.queries, f.passages}, lc, cfg);
  CHECK(r.report.epochs.size() == 3);
  CHECK(r.report.best_epoch == 0);
}

TEST_CASE("adapter application keeps ids and unit norm") {
  const auto store = fixtures::random_store(50, 7, 9);
  const AdapterModel identity(7);
  const auto same = apply_adapter(identity, store);
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(same.id(i) == store.id(i));
    for (std::size_t d = 0; d < 7; ++d) CHECK(same.row(i)[d] == doctest::Approx(store.row(i)[d]).epsilon(1e-6));
  }
  const auto m = checks::random_adapter(7, 3);
  const auto serial = apply_adapter(m, store, Exec::serial);
  const auto parallel = apply_adapter(m, store, Exec::parallel);
  for (std::size_t i = 0; i < store.size(); ++i) {
    double norm = 0;
    for (std::size_t d = 0; d < 7; ++d) {
      norm += double(serial.row(i)[d]) * serial.row(i)[d];
      CHECK(serial.row(i)[d] == parallel.row(i)[d]);
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(apply_adapter(AdapterModel(3), store), DataError);
}

TEST_CASE("checkpoints round-trip in single precision") {
  test_util::TempDir dir("ckpt");
  const auto m = checks::random_adapter(5, 2);
  save_checkpoint(dir / "a.ckpt", m, 42, json{{"lr", 0.1}});
  const auto c = load_checkpoint(dir / "a.ckpt");
  CHECK(c.header["dim"] == 5);
  CHECK(c.header["seed"] == 42);
  CHECK(c.header["format_version"] == kCheckpointFormatVersion);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    CHECK(c.model.params()[i] == static_cast<double>(static_cast<float>(m.params()[i])));
}

TEST_CASE("AdamW decays weights but not the bias") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, 4, 2);
  std::vector<double> p{1, 1, 1, 1};
  const std::vector<double> zero(4, 0.0);
  opt.step(p, zero);
  CHECK(p[0] == doctest::Approx(1 - 0.1 * 0.5));
  CHECK(p[2] == 1.0);
  CHECK(opt.steps() == 1);
}
