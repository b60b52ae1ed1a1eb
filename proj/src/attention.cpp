#include "icl/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace icl {
namespace {

Vector attend(const Matrix& values, const Matrix& keys, const Vector& q, bool temperature_scaled) {
  RowVector scores = (keys.transpose() * q).transpose();
  if (temperature_scaled) scores /= std::sqrt(static_cast<double>(q.size()));
  const Matrix weights = column_softmax(scores.transpose());
  return values * weights.col(0);
}

void check_context(const Matrix& context, const Vector& query, const AttentionWeights& w) {
  w.validate();
  require(context.cols() >= 1, "attention: empty context");
  require(context.rows() == w.input_dim() && query.size() == w.input_dim(),
          "attention: token dimension does not match the projections");
  require_finite(context, "attention context");
  require_finite(query, "attention query");
}

double temper_divisor(const AttentionWeights& w) {
  return std::sqrt(static_cast<double>(w.output_dim()));
}

Matrix activate(const Matrix& z, Activation a) {
  if (a == Activation::Gelu) return z.unaryExpr([](double x) { return icl::gelu(x); });
  return z.unaryExpr([](double x) { return icl::elu(x); });
}

}  // namespace

void AttentionWeights::validate() const {
  require(query.size() > 0 && key.size() > 0 && value.size() > 0,
          "AttentionWeights: empty projection");
  require(query.rows() == key.rows() && key.rows() == value.rows() &&
              query.cols() == key.cols() && key.cols() == value.cols(),
          "AttentionWeights: W_Q, W_K, W_V must share d_o x d_i");
  require_finite(query, "W_Q");
  require_finite(key, "W_K");
  require_finite(value, "W_V");
}

AttentionWeights AttentionWeights::random(Index d_o, Index d_i, SeededRng& rng) {
  require(d_o >= 1 && d_i >= 1, "AttentionWeights::random: dimensions must be positive");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_i));
  AttentionWeights w;
  w.query = rng.normal_matrix(d_o, d_i, scale);
  w.key = rng.normal_matrix(d_o, d_i, scale);
  w.value = rng.normal_matrix(d_o, d_i, scale);
  return w;
}

void FfnWeights::validate() const {
  require(w1.rows() >= 1 && w1.cols() >= 1, "FfnWeights: empty W_1");
  require(b1.size() == w1.rows(), "FfnWeights: b_1 must have d_h entries");
  require(w2.rows() == w1.cols() && w2.cols() == w1.rows(), "FfnWeights: W_2 must be d_o x d_h");
  require(b2.size() == w2.rows(), "FfnWeights: b_2 must have d_o entries");
}

Matrix assemble_context(const Matrix& demos, const Matrix& prior_queries, const Vector& query,
                        bool include_query_self) {
  const Index d = query.size();
  require(demos.cols() == 0 || demos.rows() == d, "assemble_context: demo dimension mismatch");
  require(prior_queries.cols() == 0 || prior_queries.rows() == d,
          "assemble_context: prior query dimension mismatch");
  const Index n = demos.cols() + prior_queries.cols() + (include_query_self ? 1 : 0);
  Matrix out(d, n);
  out.leftCols(demos.cols()) = demos;
  out.middleCols(demos.cols(), prior_queries.cols()) = prior_queries;
  if (include_query_self) out.col(n - 1) = query;
  return out;
}

Matrix attention_matrix(const Matrix& tokens, const AttentionWeights& w, bool temperature_scaled) {
  w.validate();
  require(tokens.rows() == w.input_dim() && tokens.cols() >= 1,
          "attention_matrix: token dimension mismatch");
  Matrix scores = (w.key * tokens).transpose() * (w.query * tokens);
  if (temperature_scaled) scores /= temper_divisor(w);
  return column_softmax(scores);
}

Vector exact_attention_query(const Matrix& context, const Vector& query, const AttentionWeights& w,
                             bool temperature_scaled) {
  check_context(context, query, w);
  return attend(w.value * context, w.key * context, w.query * query, temperature_scaled);
}

Vector kernel_attention_query(const Matrix& context, const Vector& query,
                              const AttentionWeights& w, const FeatureMap& features) {
  check_context(context, query, w);
  require(features.input_dim() == w.output_dim(),
          "kernel_attention_query: feature map input dimension must equal d_o");
  const Matrix phi_k = features.apply(Matrix(w.key * context));
  const Vector phi_q = features.apply(Vector(w.query * query));
  const Vector scores = phi_k.transpose() * phi_q;
  const double normalizer = scores.sum();
  if (!(normalizer > 0.0) || !std::isfinite(normalizer))
    throw RangeError("kernel_attention_query: normalizer is not a positive finite number");
  return (w.value * context) * scores / normalizer;
}

Vector kernel_attention_query_exact_kernel(const Matrix& context, const Vector& query,
                                           const AttentionWeights& w) {
  check_context(context, query, w);
  const Matrix keys = w.key * context;
  const Vector q = w.query * query;
  Vector scores(context.cols());
  for (Index j = 0; j < context.cols(); ++j)
    scores(j) = softmax_kernel_exact(keys.col(j), q);
  return (w.value * context) * scores / scores.sum();
}

FfnOutput ffn_forward(const Vector& h, const FfnWeights& f) {
  f.validate();
  require(h.size() == f.w1.cols(), "ffn_forward: input dimension mismatch");
  const Vector pre = f.w1 * h + f.b1;
  FfnOutput out;
  out.mask = pre.unaryExpr([](double x) { return x >= 0.0 ? 1.0 : 0.0; });
  out.output = f.w2 * pre.cwiseProduct(out.mask) + f.b2;
  return out;
}

WfRankReport wf_rank_report(const FfnWeights& f, const Vector& mask) {
  f.validate();
  require(mask.size() == f.hidden_dim(), "wf_rank_report: mask must have d_h entries");
  WfRankReport r;
  const Matrix masked_w2 = f.w2 * mask.asDiagonal();
  r.wf = masked_w2 * f.w1;
  r.bf = masked_w2 * f.b1 + f.b2;
  const auto active = static_cast<Index>(std::llround(mask.sum()));
  r.upper_bound = std::min({f.w1.cols(), f.hidden_dim(), active});
  r.numerical_rank = numerical_rank(r.wf);
  return r;
}

PrefixLmForward prefixlm_stack_forward(const Matrix& tokens,
                                       const std::vector<AttentionWeights>& layers,
                                       const FeatureMap& features) {
  require(!layers.empty(), "prefixlm_stack_forward: empty layer list");
  require(tokens.cols() >= 2, "prefixlm_stack_forward: need at least one demo and the query");
  const Index n = tokens.cols() - 1;
  PrefixLmForward out;
  out.hidden.reserve(layers.size() + 1);
  out.hidden.push_back(tokens);
  for (const AttentionWeights& w : layers) {
    w.validate();
    require(w.output_dim() == w.input_dim(), "prefixlm_stack_forward: layers must be square");
    const Matrix& h = out.hidden.back();
    require(h.rows() == w.input_dim(), "prefixlm_stack_forward: layer dimension mismatch");
    const Matrix phi_k = features.apply(Matrix(w.key * h));
    const Matrix phi_q = features.apply(Matrix(w.query * h));
    const Matrix values = w.value * h;
    Matrix next(h.rows(), h.cols());
    const Matrix demo_scores = phi_k.leftCols(n).transpose() * phi_q.leftCols(n);
    next.leftCols(n) = values.leftCols(n) * column_normalize(demo_scores);
    const Vector query_scores = phi_k.transpose() * phi_q.col(n);
    next.col(n) = values * query_scores / query_scores.sum();
    require_finite(next, "prefixlm layer output");
    out.hidden.push_back(std::move(next));
  }
  out.final_query = out.hidden.back().col(n);
  return out;
}

Vector regularized_attention(const Matrix& demos, const Matrix& prior_queries, const Vector& query,
                             const AttentionWeights& w, double alpha, bool include_query_self) {
  require(std::isfinite(alpha), "regularized_attention: alpha must be finite");
  const Matrix context = assemble_context(demos, prior_queries, query, include_query_self);
  check_context(context, query, w);
  Matrix shrunk = context;
  const Index n_d = demos.cols();
  shrunk.rightCols(context.cols() - n_d) *= (1.0 - alpha);
  return attend(w.value * shrunk, w.key * context, w.query * query, true);
}

Matrix regularized_self_attention(const Matrix& tokens, const AttentionWeights& w, double alpha) {
  require(std::isfinite(alpha), "regularized_self_attention: alpha must be finite");
  Matrix a = attention_matrix(tokens, w, true);
  a.diagonal().array() -= alpha;
  const RowVector sums = a.colwise().sum();
  for (Index j = 0; j < sums.size(); ++j)
    if (std::abs(sums(j)) <= 1e-12)
      throw DegenerateError("regularized_self_attention: column " + std::to_string(j) +
                            " sums to zero after subtracting alpha");
  return (w.value * tokens) * column_normalize(a);
}

const char* to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "elu"; }

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "elu") return Activation::Elu;
  throw ValidationError("unknown activation '" + std::string(name) + "' (expected gelu or elu)");
}

AugmentSpec AugmentSpec::identity() { return AugmentSpec{}; }

AugmentSpec AugmentSpec::mlp(int depth, Activation activation, Index width) {
  require(depth == 1 || depth == 2, "AugmentSpec::mlp: depth must be 1 or 2");
  require(width >= 0, "AugmentSpec::mlp: negative width");
  AugmentSpec g;
  g.kind = Kind::Mlp;
  g.depth = depth;
  g.activation = activation;
  g.width = width;
  return g;
}

AugmentSpec AugmentSpec::parallel_mlp(double c, Activation activation, Index width) {
  require(std::isfinite(c), "AugmentSpec::parallel_mlp: c must be finite");
  require(width >= 0, "AugmentSpec::parallel_mlp: negative width");
  AugmentSpec g;
  g.kind = Kind::ParallelMlp;
  g.depth = 2;
  g.activation = activation;
  g.width = width;
  g.c = c;
  return g;
}

AugmentSpec AugmentSpec::initialize(Index d_o, Index d_i, SeededRng& rng) const {
  AugmentSpec g = *this;
  g.weights.clear();
  auto draw = [&](Index rows, Index cols) {
    return rng.normal_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  };
  switch (kind) {
    case Kind::Identity:
      break;
    case Kind::Mlp:
      if (depth == 1) {
        g.width = d_o;
        g.weights.push_back(draw(d_o, d_o));
      } else {
        if (g.width == 0) g.width = d_o;
        g.weights.push_back(draw(g.width, d_o));
        g.weights.push_back(draw(d_o, g.width));
      }
      break;
    case Kind::ParallelMlp:
      if (g.width == 0) g.width = 2 * d_o;
      g.weights.push_back(draw(g.width, d_i));
      g.weights.push_back(draw(d_o, g.width));
      break;
  }
  return g;
}

Matrix AugmentSpec::apply(const Matrix& projected, const Matrix& raw) const {
  if (kind == Kind::Identity) return projected;
  require(initialized(), "AugmentSpec::apply: weights not initialized");
  Matrix out;
  if (kind == Kind::Mlp) {
    require(weights[0].cols() == projected.rows(), "AugmentSpec: Mlp input dimension mismatch");
    if (depth == 1) {
      out = activate(weights[0] * projected, activation);
    } else {
      require(weights.size() == 2 && weights[1].cols() == weights[0].rows(),
              "AugmentSpec: Mlp hidden dimension mismatch");
      out = weights[1] * activate(weights[0] * projected, activation);
    }
  } else {
    require(weights.size() == 2 && weights[0].cols() == raw.rows() &&
                weights[1].cols() == weights[0].rows() && raw.cols() == projected.cols(),
            "AugmentSpec: ParallelMlp dimension mismatch");
    out = projected + c * (weights[1] * activate(weights[0] * raw, activation));
  }
  if (out.rows() != projected.rows())
    throw ValidationError("AugmentSpec: output dimension " + std::to_string(out.rows()) +
                          " differs from d_o " + std::to_string(projected.rows()));
  return out;
}

Vector augmented_attention(const Matrix& context, const Vector& query, const AttentionWeights& w,
                           const AugmentSpec& g1, const AugmentSpec& g2) {
  check_context(context, query, w);
  const Matrix values = g1.apply(w.value * context, context);
  const Matrix keys = g2.apply(w.key * context, context);
  return attend(values, keys, w.query * query, true);
}

std::vector<std::vector<Index>> lowest_score_neighbours(const Matrix& scores, Index demos,
                                                        Index k) {
  require(scores.rows() >= demos && scores.cols() >= demos,
          "lowest_score_neighbours: score matrix smaller than the demo block");
  require(k >= 1 && k <= demos - 1, "negative samples: k must lie in [1, N-1]");
  std::vector<std::vector<Index>> sets(static_cast<std::size_t>(demos));
  std::vector<Index> order;
  for (Index i = 0; i < demos; ++i) {
    order.clear();
    for (Index j = 0; j < demos; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return scores(a, i) < scores(b, i); });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    sets[static_cast<std::size_t>(i)] = order;
  }
  return sets;
}

Matrix negative_demos(const Matrix& demos, const AttentionWeights& w, double beta, Index k) {
  require(std::isfinite(beta), "negative_demos: beta must be finite");
  if (beta == 0.0) return demos;
  const Matrix scores = (w.key * demos).transpose() * (w.query * demos);
  const auto sets = lowest_score_neighbours(scores, demos.cols(), k);
  Matrix out = demos;
  for (Index i = 0; i < demos.cols(); ++i) {
    Vector acc = Vector::Zero(demos.rows());
    for (Index j : sets[static_cast<std::size_t>(i)]) acc += demos.col(j);
    out.col(i) -= (beta / static_cast<double>(k)) * acc;
  }
  return out;
}

Vector negative_attention(const Matrix& demos, const Matrix& prior_queries, const Vector& query,
                          const AttentionWeights& w, double beta, Index k,
                          bool include_query_self) {
  const Matrix context = assemble_context(demos, prior_queries, query, include_query_self);
  check_context(context, query, w);
  Matrix modified = context;
  modified.leftCols(demos.cols()) = negative_demos(demos, w, beta, k);
  return attend(w.value * modified, w.key * context, w.query * query, true);
}

Matrix ridge_attention(const Matrix& tokens, const AttentionWeights& w, const FeatureMap& features,
                       double alpha) {
  w.validate();
  require(std::isfinite(alpha), "ridge_attention: alpha must be finite");
  require(tokens.rows() == w.input_dim() && tokens.cols() >= 1,
          "ridge_attention: token dimension mismatch");
  require(features.input_dim() == w.output_dim(),
          "ridge_attention: feature map input dimension must equal d_o");
  const Matrix phi_k = features.apply(Matrix(w.key * tokens));
  const Matrix phi_q = features.apply(Matrix(w.query * tokens));
  const Matrix gram = phi_k * phi_k.transpose();
  const Matrix left = (w.value * tokens) * phi_k.transpose();
  const Index d_r = gram.rows();
  Matrix out(w.output_dim(), tokens.cols());
  for (Index j = 0; j < tokens.cols(); ++j) {
    const double normalizer = (phi_k.transpose() * phi_q.col(j)).sum();
    Matrix system = gram;
    system.diagonal().array() += alpha * normalizer;
    Vector y;
    if (alpha > 0.0) {
      Eigen::LLT<Matrix> llt(system);
      if (llt.info() != Eigen::Success)
        throw SingularSystemError("ridge_attention: shifted Gram matrix is not positive definite");
      y = llt.solve(phi_q.col(j));
    } else {
      Eigen::FullPivLU<Matrix> lu(system);
      if (!lu.isInvertible() || lu.rank() < d_r)
        throw SingularSystemError("ridge_attention: Gram system is singular (alpha <= 0)");
      y = lu.solve(phi_q.col(j));
    }
    out.col(j) = left * y;
  }
  require_finite(out, "ridge_attention output");
  return out;
}

}  // namespace icl
