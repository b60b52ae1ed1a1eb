#include <doctest.h>

#include "icl/harness.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

using namespace icl;

namespace {

ModificationConfig variant(const std::string& name) {
  ModificationConfig m;
  m.name = name;
  if (name == "regularized") m.alpha = 0.2;
  if (name == "negative") {
    m.beta = 0.3;
    m.k = 2;
  }
  if (name == "mlp1") m.g2 = AugmentSpec::mlp(1, Activation::Gelu);
  if (name == "mlp2") m.g1 = AugmentSpec::mlp(2, Activation::Elu, 5);
  if (name == "parallel") m.g1 = AugmentSpec::parallel_mlp(0.5, Activation::Gelu);
  if (name == "combined") {
    m.alpha = -0.1;
    m.beta = 0.2;
    m.k = 1;
    m.g1 = AugmentSpec::mlp(2, Activation::Gelu);
    m.g2 = AugmentSpec::mlp(1, Activation::Elu);
  }
  return m;
}

}  // namespace

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (unsigned threads : {1u, 3u}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(37, threads, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 2,
                               [](std::size_t i) {
                                 if (i == 4) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("normal model prediction equals kernel attention") {
  const TaskSpec task = make_task(TaskKind::Linear, 5, 1, 3);
  SeededRng rng(40);
  const TokenBatch batch = sample_task_batch(task, 9, rng);
  for (FeatureKind kind : {FeatureKind::PositiveRandom, FeatureKind::EluPlusOne}) {
    TrainConfig cfg;
    cfg.feature_kind = kind;
    cfg.feature_dim = 64;
    const AttentionModel m = AttentionModel::initialize(6, 1, cfg, SeededRng(1));
    const AttentionModel::Evaluation ev = m.evaluate(batch, false);
    const Vector h = kernel_attention_query(batch.tokens, batch.tokens.col(8),
                                            m.effective_weights(), m.features());
    CHECK(ev.prediction(0) == doctest::Approx(h(5)).epsilon(1e-12));
    CHECK(ev.loss == doctest::Approx((h(5) - batch.query_label(0)) * (h(5) - batch.query_label(0))).epsilon(1e-12));
  }
}

TEST_CASE("training gradients match finite differences for every variant") {
  const TaskSpec task = make_task(TaskKind::Trig, 4, 2, 5);
  SeededRng rng(41);
  const TokenBatch batch = sample_task_batch(task, 7, rng);
  for (const char* name :
       {"normal", "regularized", "negative", "mlp1", "mlp2", "parallel", "combined"}) {
    for (FeatureKind kind : {FeatureKind::PositiveRandom, FeatureKind::EluPlusOne}) {
      CAPTURE(name);
      TrainConfig cfg;
      cfg.feature_kind = kind;
      cfg.feature_dim = 16;
      cfg.modification = variant(name);
      AttentionModel m = AttentionModel::initialize(6, 2, cfg, SeededRng(7));
      const auto analytic = m.evaluate(batch, true).gradients;
      const auto numeric = finite_difference_gradient(
          [&](const std::vector<Matrix>& p) {
            AttentionModel copy = m;
            copy.set_parameters(p);
            return copy.loss(batch);
          },
          m.parameters(), 1e-6);
      CHECK(max_relative_discrepancy(analytic, numeric) < 1e-5);
    }
  }
}

TEST_CASE("neutral modifications reproduce the normal loss exactly") {
  const TaskSpec task = make_task(TaskKind::Linear, 4, 1, 2);
  SeededRng rng(42);
  const TokenBatch batch = sample_task_batch(task, 6, rng);
  TrainConfig cfg;
  cfg.feature_dim = 32;
  const AttentionModel normal = AttentionModel::initialize(5, 1, cfg, SeededRng(3));
  cfg.modification.alpha = 0.0;
  cfg.modification.beta = 0.0;
  cfg.modification.k = 3;
  const AttentionModel neutral = AttentionModel::initialize(5, 1, cfg, SeededRng(3));
  CHECK(normal.loss(batch) == neutral.loss(batch));
}

TEST_CASE("training is deterministic and honours the epoch hook") {
  const TaskSpec task = make_task(TaskKind::Linear, 5, 1, 11);
  TrainConfig cfg;
  cfg.tokens_per_step = 8;
  cfg.steps_per_epoch = 32;
  cfg.epochs = 6;
  cfg.feature_dim = 64;
  cfg.learning_rate = 0.01;
  cfg.seed = 11;
  const TrainResult a = train_attention_model(task, cfg);
  const TrainResult b = train_attention_model(task, cfg);
  CHECK(a.epoch_losses == b.epoch_losses);
  CHECK(a.epoch_losses.size() == 6);
  CHECK(a.batch_hashes.size() == 32);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());

  Index calls = 0;
  const TrainResult c = train_attention_model(task, cfg, [&](Index epoch, double) {
    ++calls;
    return epoch < 2;
  });
  CHECK(calls == 2);
  CHECK(c.epoch_losses.size() == 2);
  CHECK(c.epoch_losses[1] == a.epoch_losses[1]);

  cfg.learning_rate = 0.0;
  const TrainResult flat = train_attention_model(task, cfg);
  for (double l : flat.epoch_losses) CHECK(l == flat.epoch_losses.front());
}

TEST_CASE("runaway learning rate reports divergence with the step") {
  const TaskSpec task = make_task(TaskKind::Exp, 5, 1, 1);
  TrainConfig cfg;
  cfg.tokens_per_step = 8;
  cfg.steps_per_epoch = 64;
  cfg.epochs = 4;
  cfg.feature_dim = 32;
  cfg.learning_rate = 1e6;
  try {
    train_attention_model(task, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 1);
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.modification.alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.modification.alpha = 0.0;
  cfg.modification.beta = 0.1;
  cfg.modification.k = 15;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.modification.k = 14;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("variant sweep shares data and is thread-count invariant") {
  TrainConfig base;
  base.tokens_per_step = 6;
  base.steps_per_epoch = 16;
  base.epochs = 3;
  base.feature_dim = 32;
  std::vector<ModificationConfig> variants{variant("normal"), variant("regularized"),
                                           variant("mlp1")};
  variants[0].name = "normal";
  const auto one = variant_sweep(TaskKind::Linear, 4, 1, base, variants, {1, 2}, 1);
  const auto two = variant_sweep(TaskKind::Linear, 4, 1, base, variants, {1, 2}, 3);
  REQUIRE(one.size() == 6);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].variant == two[i].variant);
    CHECK(one[i].seed == two[i].seed);
    CHECK(one[i].epoch_losses == two[i].epoch_losses);
  }
  CHECK(one[0].variant == "normal");
  CHECK(one[1].seed == 2);
  CHECK(one[2].variant == "regularized");
}

TEST_CASE("rank bound experiment") {
  const auto forced = rank_bound_experiment(6, {2, 6, 12}, 4, 3, 1, true);
  CHECK(forced[0].mean_bound == 2.0);
  CHECK(forced[1].mean_bound == 6.0);
  CHECK(forced[2].mean_bound == 6.0);
  const auto rows = rank_bound_experiment(8, {1, 4, 16, 64}, 20, 5, 2);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].mean_bound >= rows[i - 1].mean_bound);
  for (const auto& r : rows) CHECK(r.mean_bound <= static_cast<double>(std::min<Index>(8, r.hidden_dim)));
}

TEST_CASE("equivalence experiment") {
  EquivalenceExperiment cfg;
  cfg.feature_dim = 128;
  const auto one = equivalence_experiment(cfg, {1, 2, 3}, 1);
  const auto many = equivalence_experiment(cfg, {1, 2, 3}, 3);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].report.steps == 15);
    CHECK(one[i].report.final_relative_error() < 1e-12);
    CHECK(one[i].report.step_errors == many[i].report.step_errors);
  }
}

TEST_CASE("approximation error shrinks with feature dimension") {
  const auto rows = approx_experiment(TaskKind::Linear, 5, 1, 8, {4, 64, 1024}, 12, 3, 2);
  REQUIRE(rows.size() == 36);
  double mse[3] = {0, 0, 0};
  for (const auto& r : rows) {
    const int a = r.feature_dim == 4 ? 0 : r.feature_dim == 64 ? 1 : 2;
    mse[a] += r.mse;
  }
  CHECK(mse[1] < mse[0]);
  CHECK(mse[2] < mse[1]);
  CHECK(rows[0].trial == 0);
  CHECK(rows[12].feature_dim == 64);
}
