#pragma once

#include "icl/numerics.hpp"
#include "icl/rng.hpp"

#include <string_view>

namespace icl {

enum class TaskKind { Linear, Trig, Exp };

const char* to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// Synthetic regression task s = g(W t).
///   linear: s = W t,       t ~ U(-1, 1)^{d_t}
///   trig:   s = cos(W t),  t ~ U(0, pi)^{d_t}
///   exp:    s = exp(W t),  t ~ U(-1, 1)^{d_t}
struct TaskSpec {
  TaskKind kind = TaskKind::Linear;
  Index input_dim = 11;  // d_t
  Index label_dim = 1;   // d_s
  Matrix task_matrix;    // d_s x d_t

  Index token_dim() const noexcept { return input_dim + label_dim; }
  void validate() const;

  /// Task matrix with i.i.d. N(0, 1) entries.
  static TaskSpec random(TaskKind kind, Index input_dim, Index label_dim, SeededRng& rng);

  Vector label(const Vector& t) const;
};

/// Tokens x_i = [t_i; s_i], the last column being the query with its label
/// slot zeroed. The true query label is kept separately.
struct TokenBatch {
  Matrix tokens;
  Vector query_label;
};

/// n labelled tokens [t; s] with nothing masked.
Matrix sample_task_tokens(const TaskSpec& task, Index n, SeededRng& rng);

TokenBatch sample_task_batch(const TaskSpec& task, Index n, SeededRng& rng);

}  // namespace icl
