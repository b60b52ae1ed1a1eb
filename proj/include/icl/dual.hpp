#pragma once

#include "icl/attention.hpp"
#include "icl/features.hpp"
#include "icl/numerics.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace icl {

/// f(z) = W phi(z) (+ b). The bias is never trained.
struct DualModel {
  Matrix weight;
  std::optional<Vector> bias;
  FeatureMap features;
};

/// Training pairs (z_i, y_i), normalizer D, test input and learning rate. The
/// normalizer contains phi(W_Q x_q), so a dataset belongs to one query.
struct DualDataset {
  Matrix inputs;  // d_o x N, column i is W_K x_i
  Matrix labels;  // column i is W_V x_i (or W_F W_V x_i)
  double normalizer = 0.0;
  Vector test_input;  // W_Q x_q
  double learning_rate = 1.0;

  Index size() const noexcept { return inputs.cols(); }
};

struct DualSetup {
  DualModel model;
  DualDataset data;
};

/// W_0 = (1/D) V_T phi(K_T)^T over the non-demo block (prior queries plus the
/// query itself when include_query_self); data from the demos.
DualSetup build_dual_for_attention(const Matrix& demos, const Matrix& prior_queries,
                                   const Vector& query, const AttentionWeights& w,
                                   const FeatureMap& features, bool include_query_self,
                                   double learning_rate);

/// The same construction followed by the FFN: W_init = W_F W_0, bias b_F and
/// labels W_F W_V x_i, with I_M taken from the query's own forward pass.
DualSetup build_dual_for_transformer_layer(const Matrix& demos, const Matrix& prior_queries,
                                           const Vector& query, const AttentionWeights& w,
                                           const FfnWeights& ffn, const FeatureMap& features,
                                           bool include_query_self, double learning_rate);

/// -(1/(eta D)) sum_i y_i^T W phi(z_i).
double dual_loss(const DualModel& model, const DualDataset& data);

/// d loss / dW = -(1/(eta D)) sum_i y_i phi(z_i)^T. Independent of W.
Matrix dual_loss_gradient(const DualModel& model, const DualDataset& data);

enum class UpdateSchedule { FullBatch, Incremental, Reversed };

/// Called after every applied step with the 1-based step index.
using DualStepHook = std::function<void(std::size_t step, const DualModel& model)>;

/// FullBatch: one step on the summed loss. Incremental / Reversed: one step
/// per demonstration, in order or in reverse.
DualModel dual_update(const DualModel& model, const DualDataset& data, UpdateSchedule schedule,
                      const DualStepHook& hook = {});

Vector dual_predict(const DualModel& model, const Vector& z);

struct EquivalenceReport {
  /// ||dual_predict - h'||_2 after each step; entry 0 is the initialization.
  std::vector<double> step_errors;
  double reference_norm = 0.0;
  std::size_t steps = 0;

  double final_error() const { return step_errors.back(); }
  double final_relative_error() const;
};

/// Incremental dual training against kernel attention on the same context.
EquivalenceReport verify_equivalence(const Matrix& demos, const Matrix& prior_queries,
                                     const Vector& query, const AttentionWeights& w,
                                     const FeatureMap& features, bool include_query_self = true,
                                     double learning_rate = 1.0,
                                     UpdateSchedule schedule = UpdateSchedule::Incremental);

struct MultiLayerDual {
  std::vector<DualModel> initial;
  std::vector<DualModel> trained;
  /// demo_outputs[l] is d x N, the reconstructed demo outputs of layer l+1.
  std::vector<Matrix> demo_outputs;
  /// Query prediction of every layer; the last one is the stack output.
  std::vector<Vector> query_outputs;
  Vector final_prediction;
};

/// One dual model per layer over [X_D, x_{N+1}]. Demo outputs of each layer
/// are rebuilt as (D / D_i) [f_hat(W_Q h_i) - f_init(W_Q h_i)].
MultiLayerDual multi_layer_dual_run(const Matrix& tokens,
                                    const std::vector<AttentionWeights>& layers,
                                    const FeatureMap& features, double learning_rate = 1.0);

}  // namespace icl
