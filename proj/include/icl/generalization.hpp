#pragma once

#include "icl/features.hpp"
#include "icl/numerics.hpp"
#include "icl/tasks.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace icl {

struct GramReport {
  Matrix gram;  // (K_S)_ij = <phi(W_K x_i), phi(W_K x_j)>
  double trace = 0.0;
};

GramReport gram_trace(const Matrix& demos, const Matrix& key_weights, const FeatureMap& features);

struct BoundInputs {
  double w = 1.0;    // Frobenius bound on W
  double rho = 1.0;  // bound on ||W_V x||
  Index d_o = 1;
  Index n = 1;
  double delta = 0.05;
  /// Negative-sample ratio K/N; selects the negative-sample variant when set.
  std::optional<double> r;

  void validate() const;
};

/// Surrogate with every O(.) constant set to 1; not a certified bound.
///   w rho d_o sqrt(trace) / N + sqrt(log(1/delta) / N)
/// or, with r set,
///   w rho d_o sqrt(trace (5/N^2 + 1/(r N^3))) + sqrt(log(1/delta) / N)
double bound_surrogate(const BoundInputs& b, double trace);

struct BoundScales {
  double rho = 0.0;
  double w = 0.0;
};

/// rho = max ||W_V x_i|| over the tokens; w = ||W_hat||_F of the trained dual
/// model with the last token as query.
BoundScales estimate_bound_scales(const Matrix& tokens, const Matrix& query_weights,
                                  const Matrix& key_weights, const Matrix& value_weights,
                                  const FeatureMap& features);

/// G = sum_i (W_V x_i) phi(W_K x_i)^T.
Matrix dual_moment(const Matrix& tokens, const Matrix& value_weights, const Matrix& key_weights,
                   const FeatureMap& features);

/// Population-loss gap of the empirical minimizer w G_N / ||G_N|| against the
/// population minimizer w G_pop / ||G_pop|| under L(W) = -<W, G_pop>:
///   w ||G_pop|| - w <G_N, G_pop> / ||G_N||.
/// DegenerateError when G_N = 0.
double generalization_gap(const Matrix& empirical_moment, const Matrix& population_moment,
                          double w);

struct GapSetup {
  TaskSpec task;
  Matrix value_weights;
  Matrix key_weights;
  FeatureMap features;
  double w = 1.0;
  Index eval_samples = 4096;
};

struct GapRow {
  Index n = 0;
  std::uint64_t seed = 0;
  double trace = 0.0;
  double gap = 0.0;
};

/// For each seed: a fresh population sample of eval_samples tokens and one
/// training sample whose prefixes give every n in n_list.
std::vector<GapRow> empirical_gap(const GapSetup& setup, const std::vector<Index>& n_list,
                                  std::uint64_t seeds, std::uint64_t base_seed);

}  // namespace icl
