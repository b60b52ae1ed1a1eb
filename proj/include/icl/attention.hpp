#pragma once

#include "icl/features.hpp"
#include "icl/numerics.hpp"
#include "icl/rng.hpp"

#include <vector>

namespace icl {

/// Query, key and value projections, each d_o x d_i.
struct AttentionWeights {
  Matrix query;
  Matrix key;
  Matrix value;

  Index output_dim() const noexcept { return query.rows(); }
  Index input_dim() const noexcept { return query.cols(); }
  void validate() const;

  /// i.i.d. normal entries scaled by 1/sqrt(d_i).
  static AttentionWeights random(Index d_o, Index d_i, SeededRng& rng);
};

/// output = W_2 relu(W_1 h + b_1) + b_2.
struct FfnWeights {
  Matrix w1;  // d_h x d_o
  Vector b1;
  Matrix w2;  // d_o x d_h
  Vector b2;

  Index hidden_dim() const noexcept { return w1.rows(); }
  void validate() const;
};

/// Column layout of an attention context: N demonstrations, T prior queries
/// and optionally the current query itself (appended last).
struct ContextLayout {
  Index demos = 1;
  Index prior_queries = 0;
  bool include_query_self = true;
};

/// [X_D, X_T, x_q] (x_q only when include_query_self).
Matrix assemble_context(const Matrix& demos, const Matrix& prior_queries, const Vector& query,
                        bool include_query_self);

/// softmax((W_K X)^T W_Q X / sqrt(d_o)) (divisor 1 when not temperature scaled).
Matrix attention_matrix(const Matrix& tokens, const AttentionWeights& w,
                        bool temperature_scaled = true);

/// W_V X softmax((W_K X)^T W_Q x_q / sqrt(d_o)).
Vector exact_attention_query(const Matrix& context, const Vector& query, const AttentionWeights& w,
                             bool temperature_scaled = true);

/// (1/D) W_V X phi(W_K X)^T phi(W_Q x_q), D the sum of the kernel scores.
Vector kernel_attention_query(const Matrix& context, const Vector& query,
                              const AttentionWeights& w, const FeatureMap& features);

/// Kernel attention with the exact kernel exp(k^T q) in place of phi.
Vector kernel_attention_query_exact_kernel(const Matrix& context, const Vector& query,
                                           const AttentionWeights& w);

struct FfnOutput {
  Vector output;
  /// Diagonal of I_M: 1 where W_1 h + b_1 >= 0.
  Vector mask;
};

FfnOutput ffn_forward(const Vector& h, const FfnWeights& f);

struct WfRankReport {
  Matrix wf;  // W_2 I_M W_1
  Vector bf;  // W_2 I_M b_1 + b_2
  Index upper_bound = 0;
  Index numerical_rank = 0;
};

WfRankReport wf_rank_report(const FfnWeights& f, const Vector& mask);

struct PrefixLmForward {
  /// hidden[l] is d x (N+1): demos first, query last. hidden[0] is the input.
  std::vector<Matrix> hidden;
  Vector final_query;
};

/// Kernel attention stack: demos attend among demos, the query attends to
/// all N+1 tokens. Every layer must be square (d_o = d_i).
PrefixLmForward prefixlm_stack_forward(const Matrix& tokens,
                                       const std::vector<AttentionWeights>& layers,
                                       const FeatureMap& features);

/// W_V [X_D, (1 - alpha) X_T] softmax(...), the query column counting as X_T.
Vector regularized_attention(const Matrix& demos, const Matrix& prior_queries, const Vector& query,
                             const AttentionWeights& w, double alpha,
                             bool include_query_self = true);

/// W_V X Norm(softmax(...) - alpha I). DegenerateError when a column sums to ~0.
Matrix regularized_self_attention(const Matrix& tokens, const AttentionWeights& w, double alpha);

enum class Activation { Gelu, Elu };

const char* to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Columnwise transform g applied to projected values or keys.
///   Identity:    g(z) = z
///   Mlp depth 1: g(z) = act(W z), W d_o x d_o
///   Mlp depth 2: g(z) = W_2 act(W_1 z)
///   ParallelMlp: g(z) = z + c W_2 act(W_1 x), x the unprojected token
struct AugmentSpec {
  enum class Kind { Identity, Mlp, ParallelMlp };

  Kind kind = Kind::Identity;
  int depth = 1;
  Activation activation = Activation::Gelu;
  Index width = 0;
  double c = 0.0;
  std::vector<Matrix> weights;

  static AugmentSpec identity();
  static AugmentSpec mlp(int depth, Activation activation, Index width = 0);
  static AugmentSpec parallel_mlp(double c, Activation activation, Index width = 0);

  bool is_identity() const noexcept { return kind == Kind::Identity; }
  bool initialized() const noexcept { return kind == Kind::Identity || !weights.empty(); }

  /// Copy with weights drawn N(0, 1/fan_in) for projected width d_o and raw
  /// token width d_i. A zero width defaults to d_o (Mlp) or 2 d_o (ParallelMlp).
  AugmentSpec initialize(Index d_o, Index d_i, SeededRng& rng) const;

  Matrix apply(const Matrix& projected, const Matrix& raw) const;
};

Vector augmented_attention(const Matrix& context, const Vector& query, const AttentionWeights& w,
                           const AugmentSpec& g1, const AugmentSpec& g2);

/// Index sets N(i): for every demo i, the k other demos j with the lowest
/// scores(j, i), ties to the lowest index. scores is key x query.
std::vector<std::vector<Index>> lowest_score_neighbours(const Matrix& scores, Index demos,
                                                        Index k);

/// x_i - (beta / k) sum_{j in N(i)} x_j for the demos, selected by raw scores.
Matrix negative_demos(const Matrix& demos, const AttentionWeights& w, double beta, Index k);

Vector negative_attention(const Matrix& demos, const Matrix& prior_queries, const Vector& query,
                          const AttentionWeights& w, double beta, Index k,
                          bool include_query_self = true);

/// Column j: W_V X phi(K)^T (phi(K) phi(K)^T + alpha D_j I)^{-1} phi(W_Q x_j),
/// D_j the kernel normalizer of column j.
Matrix ridge_attention(const Matrix& tokens, const AttentionWeights& w, const FeatureMap& features,
                       double alpha);

}  // namespace icl
