#include "icl/tasks.hpp"

#include <numbers>
#include <string>

namespace icl {

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Linear:
      return "linear";
    case TaskKind::Trig:
      return "trig";
    case TaskKind::Exp:
      return "exp";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "linear") return TaskKind::Linear;
  if (name == "trig") return TaskKind::Trig;
  if (name == "exp") return TaskKind::Exp;
  throw ValidationError("unknown task '" + std::string(name) + "' (expected linear, trig or exp)");
}

void TaskSpec::validate() const {
  require(input_dim >= 1 && label_dim >= 1, "TaskSpec: dimensions must be positive");
  require(task_matrix.rows() == label_dim && task_matrix.cols() == input_dim,
          "TaskSpec: task matrix must be d_s x d_t");
  require_finite(task_matrix, "task matrix");
}

TaskSpec TaskSpec::random(TaskKind kind, Index input_dim, Index label_dim, SeededRng& rng) {
  require(input_dim >= 1 && label_dim >= 1, "TaskSpec: dimensions must be positive");
  TaskSpec t;
  t.kind = kind;
  t.input_dim = input_dim;
  t.label_dim = label_dim;
  t.task_matrix = rng.normal_matrix(label_dim, input_dim);
  return t;
}

Vector TaskSpec::label(const Vector& t) const {
  const Vector z = task_matrix * t;
  switch (kind) {
    case TaskKind::Linear:
      return z;
    case TaskKind::Trig:
      return z.array().cos().matrix();
    case TaskKind::Exp:
      return z.array().exp().matrix();
  }
  return z;
}

Matrix sample_task_tokens(const TaskSpec& task, Index n, SeededRng& rng) {
  task.validate();
  require(n >= 1, "sample_task_tokens: need at least one token");
  const double lo = task.kind == TaskKind::Trig ? 0.0 : -1.0;
  const double hi = task.kind == TaskKind::Trig ? std::numbers::pi : 1.0;
  Matrix tokens(task.token_dim(), n);
  for (Index j = 0; j < n; ++j) {
    Vector t(task.input_dim);
    for (Index i = 0; i < task.input_dim; ++i) t(i) = rng.uniform(lo, hi);
    tokens.col(j).head(task.input_dim) = t;
    tokens.col(j).tail(task.label_dim) = task.label(t);
  }
  return tokens;
}

TokenBatch sample_task_batch(const TaskSpec& task, Index n, SeededRng& rng) {
  require(n >= 2, "sample_task_batch: need at least two tokens");
  TokenBatch b;
  b.tokens = sample_task_tokens(task, n, rng);
  b.query_label = b.tokens.col(n - 1).tail(task.label_dim);
  b.tokens.col(n - 1).tail(task.label_dim).setZero();
  return b;
}

}  // namespace icl
