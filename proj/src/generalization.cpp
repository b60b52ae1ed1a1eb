#include "icl/generalization.hpp"

#include "icl/attention.hpp"
#include "icl/dual.hpp"

#include <algorithm>
#include <cmath>

namespace icl {

GramReport gram_trace(const Matrix& demos, const Matrix& key_weights, const FeatureMap& features) {
  require(demos.cols() >= 1, "gram_trace: need at least one demonstration");
  require(key_weights.cols() == demos.rows(), "gram_trace: W_K input dimension mismatch");
  require(features.input_dim() == key_weights.rows(),
          "gram_trace: feature map input dimension must equal d_o");
  const Matrix phi = features.apply(Matrix(key_weights * demos));
  GramReport r;
  r.gram = phi.transpose() * phi;
  r.trace = phi.colwise().squaredNorm().sum();
  return r;
}

void BoundInputs::validate() const {
  require(w > 0.0 && rho > 0.0, "BoundInputs: w and rho must be positive");
  require(d_o >= 1 && n >= 1, "BoundInputs: d_o and N must be positive");
  require(delta > 0.0 && delta < 1.0, "BoundInputs: delta must lie in (0, 1)");
  if (r) require(*r > 0.0, "BoundInputs: negative-sample ratio r must be positive");
}

double bound_surrogate(const BoundInputs& b, double trace) {
  b.validate();
  require(trace >= 0.0 && std::isfinite(trace), "bound_surrogate: trace must be finite and >= 0");
  const double n = static_cast<double>(b.n);
  const double scale = b.w * b.rho * static_cast<double>(b.d_o);
  const double confidence = std::sqrt(std::log(1.0 / b.delta) / n);
  if (!b.r) return scale * std::sqrt(trace) / n + confidence;
  const double factor = 5.0 / (n * n) + 1.0 / (*b.r * n * n * n);
  return scale * std::sqrt(trace * factor) + confidence;
}

BoundScales estimate_bound_scales(const Matrix& tokens, const Matrix& query_weights,
                                  const Matrix& key_weights, const Matrix& value_weights,
                                  const FeatureMap& features) {
  require(tokens.cols() >= 2, "estimate_bound_scales: need demos and a query");
  const Index n = tokens.cols() - 1;
  const AttentionWeights w{query_weights, key_weights, value_weights};
  const DualSetup s = build_dual_for_attention(tokens.leftCols(n), Matrix(), tokens.col(n), w,
                                               features, true, 1.0);
  BoundScales out;
  out.rho = (value_weights * tokens.leftCols(n)).colwise().norm().maxCoeff();
  out.w = dual_update(s.model, s.data, UpdateSchedule::FullBatch).weight.norm();
  return out;
}

Matrix dual_moment(const Matrix& tokens, const Matrix& value_weights, const Matrix& key_weights,
                   const FeatureMap& features) {
  require(value_weights.cols() == tokens.rows() && key_weights.cols() == tokens.rows(),
          "dual_moment: projection input dimension mismatch");
  return (value_weights * tokens) * features.apply(Matrix(key_weights * tokens)).transpose();
}

double generalization_gap(const Matrix& empirical_moment, const Matrix& population_moment,
                          double w) {
  require(w > 0.0, "generalization_gap: w must be positive");
  require(empirical_moment.rows() == population_moment.rows() &&
              empirical_moment.cols() == population_moment.cols(),
          "generalization_gap: moment shape mismatch");
  const double norm_n = empirical_moment.norm();
  if (!(norm_n > 0.0))
    throw DegenerateError("generalization_gap: empirical moment is zero, minimizer undefined");
  const double aligned = (empirical_moment.array() * population_moment.array()).sum() / norm_n;
  return w * (population_moment.norm() - aligned);
}

std::vector<GapRow> empirical_gap(const GapSetup& setup, const std::vector<Index>& n_list,
                                  std::uint64_t seeds, std::uint64_t base_seed) {
  require(!n_list.empty(), "empirical_gap: empty N list");
  require(setup.w > 0.0, "empirical_gap: w must be positive");
  require(setup.eval_samples >= 1, "empirical_gap: eval_samples must be positive");
  const Index n_max = *std::max_element(n_list.begin(), n_list.end());
  require(*std::min_element(n_list.begin(), n_list.end()) >= 1, "empirical_gap: N must be >= 1");

  std::vector<GapRow> rows;
  rows.reserve(n_list.size() * seeds);
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    SeededRng rng(base_seed, seed);
    SeededRng pop_rng = rng.derive(0);
    SeededRng train_rng = rng.derive(1);
    const Matrix population = sample_task_tokens(setup.task, setup.eval_samples, pop_rng);
    const Matrix g_pop =
        dual_moment(population, setup.value_weights, setup.key_weights, setup.features) /
        static_cast<double>(setup.eval_samples);
    const Matrix sample = sample_task_tokens(setup.task, n_max, train_rng);
    for (Index n : n_list) {
      const Matrix prefix = sample.leftCols(n);
      GapRow row;
      row.n = n;
      row.seed = seed;
      row.trace = gram_trace(prefix, setup.key_weights, setup.features).trace;
      row.gap = generalization_gap(
          dual_moment(prefix, setup.value_weights, setup.key_weights, setup.features), g_pop,
          setup.w);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace icl
