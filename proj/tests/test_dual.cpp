#include <doctest.h>

#include "icl/dual.hpp"

#include <cmath>

using namespace icl;

namespace {

AttentionWeights scalar_weights(double q, double k, double v) {
  return {Matrix::Constant(1, 1, q), Matrix::Constant(1, 1, k), Matrix::Constant(1, 1, v)};
}

}  // namespace

TEST_CASE("scalar dual model by hand") {
  // d = 1, ELU+1 features, two demos, query not in its own context.
  const AttentionWeights w = scalar_weights(0.5, 2.0, 3.0);
  const FeatureMap fm = FeatureMap::elu_plus_one(1);
  Matrix demos(1, 2);
  demos << 0.25, -0.5;
  Vector q(1);
  q << 1.0;
  const DualSetup s = build_dual_for_attention(demos, Matrix(), q, w, fm, false, 0.5);
  const double phi_q = 1.5;                   // elu(0.5) + 1
  const double phi_1 = 1.5;                   // elu(0.5) + 1
  const double phi_2 = std::exp(-1.0);        // elu(-1) + 1
  const double d = phi_1 * phi_q + phi_2 * phi_q;
  CHECK(s.data.normalizer == doctest::Approx(d).epsilon(1e-15));
  CHECK(s.model.weight.isZero(0.0));
  const double loss_w1 = -(0.75 * phi_1 - 1.5 * phi_2) / (0.5 * d);
  DualModel unit = s.model;
  unit.weight.setOnes();
  CHECK(dual_loss(unit, s.data) == doctest::Approx(loss_w1).epsilon(1e-14));

  const DualModel trained = dual_update(s.model, s.data, UpdateSchedule::FullBatch);
  const double expect = (0.75 * phi_1 + -1.5 * phi_2) * phi_q / d;
  CHECK(dual_predict(trained, s.data.test_input)(0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("dual loss gradient matches finite differences") {
  SeededRng rng(20);
  const AttentionWeights w = AttentionWeights::random(3, 4, rng);
  const FeatureMap fm = FeatureMap::positive_random(3, 9, rng);
  const DualSetup s = build_dual_for_attention(rng.normal_matrix(4, 5), rng.normal_matrix(4, 2),
                                               rng.normal_vector(4), w, fm, true, 0.7);
  const Matrix g = dual_loss_gradient(s.model, s.data);
  DualModel m = s.model;
  m.weight = rng.normal_matrix(3, 9);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 9; ++c) {
      DualModel p = m, n = m;
      p.weight(r, c) += 1e-4;
      n.weight(r, c) -= 1e-4;
      const double fd = (dual_loss(p, s.data) - dual_loss(n, s.data)) / 2e-4;
      CHECK(fd == doctest::Approx(g(r, c)).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("dual update reproduces kernel attention") {
  SeededRng rng(21);
  const AttentionWeights w = AttentionWeights::random(5, 6, rng);
  const Matrix demos = rng.normal_matrix(6, 8, 0.5);
  const Matrix prior = rng.normal_matrix(6, 3, 0.5);
  const Vector q = rng.normal_vector(6, 0.5);
  for (FeatureKind kind : {FeatureKind::PositiveRandom, FeatureKind::EluPlusOne}) {
    const FeatureMap fm = kind == FeatureKind::PositiveRandom
                              ? FeatureMap::positive_random(5, 200, rng)
                              : FeatureMap::elu_plus_one(5);
    for (bool self : {true, false}) {
      for (UpdateSchedule sched :
           {UpdateSchedule::Incremental, UpdateSchedule::Reversed, UpdateSchedule::FullBatch}) {
        const EquivalenceReport r = verify_equivalence(demos, prior, q, w, fm, self, 0.3, sched);
        CHECK(r.steps == (sched == UpdateSchedule::FullBatch ? 1u : 8u));
        CHECK(r.final_relative_error() < 1e-12);
        CHECK(r.step_errors.front() > 1e-3 * r.reference_norm);
      }
    }
  }
}

TEST_CASE("dual model with only demonstrations starts at zero") {
  SeededRng rng(22);
  const AttentionWeights w = AttentionWeights::random(3, 3, rng);
  const FeatureMap fm = FeatureMap::positive_random(3, 40, rng);
  const Matrix demos = rng.normal_matrix(3, 4);
  const DualSetup s = build_dual_for_attention(demos, Matrix(), rng.normal_vector(3), w, fm,
                                               false, 1.0);
  CHECK(s.model.weight.isZero(0.0));
  CHECK(s.data.labels == w.value * demos);
}

TEST_CASE("transformer layer dual includes the FFN") {
  SeededRng rng(23);
  const Index d = 4;
  const AttentionWeights w = AttentionWeights::random(d, d, rng);
  const FeatureMap fm = FeatureMap::positive_random(d, 64, rng);
  const FfnWeights ffn{rng.normal_matrix(6, d), rng.normal_vector(6), rng.normal_matrix(d, 6),
                       rng.normal_vector(d)};
  const Matrix demos = rng.normal_matrix(d, 5, 0.5);
  const Vector q = rng.normal_vector(d, 0.5);
  const DualSetup s = build_dual_for_transformer_layer(demos, Matrix(), q, w, ffn, fm, true, 1.0);
  const DualModel trained = dual_update(s.model, s.data, UpdateSchedule::Incremental);
  const Vector h = kernel_attention_query(assemble_context(demos, Matrix(), q, true), q, w, fm);
  const Vector expect = ffn_forward(h, ffn).output;
  CHECK((dual_predict(trained, s.data.test_input) - expect).norm() < 1e-12 * expect.norm());
}

TEST_CASE("multi-layer dual matches the prefix stack") {
  SeededRng rng(24);
  const Index d = 5;
  const Matrix tokens = rng.uniform_matrix(d, 7, -0.5, 0.5);
  const FeatureMap fm = FeatureMap::positive_random(d, 256, rng);
  std::vector<AttentionWeights> layers;
  for (int l = 0; l < 3; ++l) layers.push_back(AttentionWeights::random(d, d, rng));
  const PrefixLmForward ref = prefixlm_stack_forward(tokens, layers, fm);
  const MultiLayerDual dual = multi_layer_dual_run(tokens, layers, fm, 1.0);
  REQUIRE(dual.demo_outputs.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    const Matrix expect = ref.hidden[l + 1].leftCols(6);
    CHECK(relative_error(dual.demo_outputs[l], expect) < 1e-10);
  }
  CHECK(relative_error(dual.final_prediction, ref.final_query) < 1e-10);
}

TEST_CASE("dual construction rejects bad input") {
  SeededRng rng(25);
  const AttentionWeights w = AttentionWeights::random(3, 3, rng);
  const FeatureMap fm = FeatureMap::elu_plus_one(3);
  const Matrix demos = rng.normal_matrix(3, 2);
  const Vector q = rng.normal_vector(3);
  CHECK_THROWS_AS(build_dual_for_attention(demos, Matrix(), q, w, fm, true, 0.0), ValidationError);
  CHECK_THROWS_AS(build_dual_for_attention(Matrix(3, 0), Matrix(), q, w, fm, true, 1.0),
                  ValidationError);
  CHECK_THROWS_AS(build_dual_for_attention(demos, Matrix(), q, w, FeatureMap::elu_plus_one(4),
                                           true, 1.0),
                  ValidationError);
  CHECK_THROWS_AS(multi_layer_dual_run(demos, {AttentionWeights::random(2, 3, rng)}, fm),
                  ValidationError);
}
