#include "icl/dual.hpp"

#include <cmath>

namespace icl {
namespace {

void check_learning_rate(double eta) {
  require(std::isfinite(eta) && eta > 0.0, "dual model: learning rate must be positive");
}

void check_pair(const DualModel& model, const DualDataset& data) {
  require(data.size() >= 1, "dual model: empty training set");
  require(data.labels.cols() == data.size(), "dual model: label count differs from input count");
  require(data.inputs.rows() == model.features.input_dim(),
          "dual model: input dimension does not match the feature map");
  require(model.weight.cols() == model.features.feature_dim() &&
              model.weight.rows() == data.labels.rows(),
          "dual model: weight shape does not match labels and features");
  require(data.normalizer > 0.0, "dual model: normalizer must be positive");
}

}  // namespace

DualSetup build_dual_for_attention(const Matrix& demos, const Matrix& prior_queries,
                                   const Vector& query, const AttentionWeights& w,
                                   const FeatureMap& features, bool include_query_self,
                                   double learning_rate) {
  w.validate();
  check_learning_rate(learning_rate);
  require(demos.cols() >= 1, "build_dual_for_attention: need at least one demonstration");
  require(features.input_dim() == w.output_dim(),
          "build_dual_for_attention: feature map input dimension must equal d_o");
  const Matrix context = assemble_context(demos, prior_queries, query, include_query_self);
  require(context.rows() == w.input_dim(), "build_dual_for_attention: token dimension mismatch");
  const Index n_d = demos.cols();
  const Index n_t = context.cols() - n_d;

  const Matrix keys = w.key * context;
  const Matrix phi_k = features.apply(keys);
  const Vector z_test = w.query * query;
  const Vector phi_q = features.apply(z_test);
  const double normalizer = (phi_k.transpose() * phi_q).sum();
  if (!(normalizer > 0.0) || !std::isfinite(normalizer))
    throw RangeError("build_dual_for_attention: normalizer is not a positive finite number");

  DualSetup s{DualModel{Matrix::Zero(w.output_dim(), features.feature_dim()), std::nullopt,
                        features},
              DualDataset{}};
  if (n_t > 0) {
    const Matrix values_t = w.value * context.rightCols(n_t);
    s.model.weight = values_t * phi_k.rightCols(n_t).transpose() / normalizer;
  }
  s.data.inputs = keys.leftCols(n_d);
  s.data.labels = w.value * demos;
  s.data.normalizer = normalizer;
  s.data.test_input = z_test;
  s.data.learning_rate = learning_rate;
  return s;
}

DualSetup build_dual_for_transformer_layer(const Matrix& demos, const Matrix& prior_queries,
                                           const Vector& query, const AttentionWeights& w,
                                           const FfnWeights& ffn, const FeatureMap& features,
                                           bool include_query_self, double learning_rate) {
  ffn.validate();
  require(ffn.w1.cols() == w.output_dim(), "build_dual_for_transformer_layer: FFN input must be d_o");
  const Matrix context = assemble_context(demos, prior_queries, query, include_query_self);
  const Vector h = kernel_attention_query(context, query, w, features);
  const FfnOutput forward = ffn_forward(h, ffn);
  const WfRankReport wf = wf_rank_report(ffn, forward.mask);

  DualSetup s = build_dual_for_attention(demos, prior_queries, query, w, features,
                                         include_query_self, learning_rate);
  s.model.weight = wf.wf * s.model.weight;
  s.model.bias = wf.bf;
  s.data.labels = wf.wf * s.data.labels;
  return s;
}

double dual_loss(const DualModel& model, const DualDataset& data) {
  check_pair(model, data);
  const Matrix phi = model.features.apply(data.inputs);
  const double total = (data.labels.transpose() * model.weight * phi).trace();
  return -total / (data.learning_rate * data.normalizer);
}

Matrix dual_loss_gradient(const DualModel& model, const DualDataset& data) {
  check_pair(model, data);
  const Matrix phi = model.features.apply(data.inputs);
  return -(data.labels * phi.transpose()) / (data.learning_rate * data.normalizer);
}

DualModel dual_update(const DualModel& model, const DualDataset& data, UpdateSchedule schedule,
                      const DualStepHook& hook) {
  check_pair(model, data);
  check_learning_rate(data.learning_rate);
  DualModel out = model;
  const double eta = data.learning_rate;
  const double scale = 1.0 / (eta * data.normalizer);
  if (schedule == UpdateSchedule::FullBatch) {
    out.weight -= eta * dual_loss_gradient(model, data);
    if (hook) hook(1, out);
    return out;
  }
  const Matrix phi = model.features.apply(data.inputs);
  const Index n = data.size();
  for (Index s = 0; s < n; ++s) {
    const Index i = schedule == UpdateSchedule::Incremental ? s : n - 1 - s;
    const Matrix grad = -scale * data.labels.col(i) * phi.col(i).transpose();
    out.weight -= eta * grad;
    if (hook) hook(static_cast<std::size_t>(s + 1), out);
  }
  return out;
}

Vector dual_predict(const DualModel& model, const Vector& z) {
  require(z.size() == model.features.input_dim(), "dual_predict: input dimension mismatch");
  Vector y = model.weight * model.features.apply(z);
  if (model.bias) y += *model.bias;
  return y;
}

double EquivalenceReport::final_relative_error() const {
  return final_error() / std::max(reference_norm, 1e-300);
}

EquivalenceReport verify_equivalence(const Matrix& demos, const Matrix& prior_queries,
                                     const Vector& query, const AttentionWeights& w,
                                     const FeatureMap& features, bool include_query_self,
                                     double learning_rate, UpdateSchedule schedule) {
  const DualSetup s = build_dual_for_attention(demos, prior_queries, query, w, features,
                                               include_query_self, learning_rate);
  const Matrix context = assemble_context(demos, prior_queries, query, include_query_self);
  const Vector reference = kernel_attention_query(context, query, w, features);

  EquivalenceReport report;
  report.reference_norm = reference.norm();
  report.step_errors.push_back((dual_predict(s.model, s.data.test_input) - reference).norm());
  dual_update(s.model, s.data, schedule, [&](std::size_t, const DualModel& m) {
    report.step_errors.push_back((dual_predict(m, s.data.test_input) - reference).norm());
  });
  report.steps = report.step_errors.size() - 1;
  return report;
}

MultiLayerDual multi_layer_dual_run(const Matrix& tokens,
                                    const std::vector<AttentionWeights>& layers,
                                    const FeatureMap& features, double learning_rate) {
  require(!layers.empty(), "multi_layer_dual_run: empty layer list");
  require(tokens.cols() >= 2, "multi_layer_dual_run: need at least one demo and the query");
  const Index n = tokens.cols() - 1;
  MultiLayerDual out;
  Matrix demos = tokens.leftCols(n);
  Vector query = tokens.col(n);
  for (const AttentionWeights& w : layers) {
    require(w.output_dim() == w.input_dim(), "multi_layer_dual_run: layers must be square");
    const DualSetup s =
        build_dual_for_attention(demos, Matrix(), query, w, features, true, learning_rate);
    const DualModel trained = dual_update(s.model, s.data, UpdateSchedule::FullBatch);

    const Matrix demo_queries = w.query * demos;
    const Matrix phi_q = features.apply(demo_queries);
    const Matrix phi_k = features.apply(s.data.inputs);
    const RowVector demo_normalizers = RowVector::Ones(n) * (phi_k.transpose() * phi_q);
    Matrix next(demos.rows(), n);
    for (Index i = 0; i < n; ++i) {
      const Vector z = demo_queries.col(i);
      const Vector delta = dual_predict(trained, z) - dual_predict(s.model, z);
      next.col(i) = (s.data.normalizer / demo_normalizers(i)) * delta;
    }
    const Vector q_out = dual_predict(trained, s.data.test_input);

    out.initial.push_back(s.model);
    out.trained.push_back(trained);
    out.demo_outputs.push_back(next);
    out.query_outputs.push_back(q_out);
    demos = std::move(next);
    query = q_out;
  }
  out.final_prediction = out.query_outputs.back();
  return out;
}

}  // namespace icl
