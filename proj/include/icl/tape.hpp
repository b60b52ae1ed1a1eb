#pragma once

#include "icl/numerics.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace icl {

/// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct NodeRef {
  std::uint32_t id = 0;
  friend bool operator==(NodeRef, NodeRef) = default;
};

/// Append-only record of matrix primitives with reverse-mode gradients.
///
/// Nodes are appended in evaluation order, so node ids are a topological
/// order: every operand id is smaller than the id of the node that uses it.
/// The primitive set is closed; anything the attention models need is
/// composed from it.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Constant,
    Parameter,
    MatMul,
    Transpose,
    Add,
    Sub,
    Hadamard,
    Scale,
    AddColBroadcast,  // (m x n) + (m x 1)
    AddRowBroadcast,  // (m x n) + (1 x n)
    ColumnSqNorms,    // (m x n) -> (1 x n)
    Exp,
    Elu,
    Gelu,
    Relu,
    ColumnSoftmax,
    ColumnNormalize,
    HConcat,
    SliceCols,
    SliceRows,
    SquaredError,  // sum of squared differences -> (1 x 1)
  };

  struct Gradients {
    /// One gradient per parameter, in parameter creation order.
    std::vector<Matrix> by_parameter;
    /// Nodes whose adjoint was propagated; each at most once.
    std::size_t nodes_visited = 0;
  };

  NodeRef constant(Matrix value);
  NodeRef parameter(Matrix value);

  NodeRef matmul(NodeRef a, NodeRef b);
  NodeRef transpose(NodeRef a);
  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef hadamard(NodeRef a, NodeRef b);
  NodeRef scale(NodeRef a, double factor);
  NodeRef add_col_broadcast(NodeRef a, NodeRef column);
  NodeRef add_row_broadcast(NodeRef a, NodeRef row);
  NodeRef column_sq_norms(NodeRef a);
  NodeRef exp(NodeRef a);
  NodeRef elu(NodeRef a);
  NodeRef gelu(NodeRef a);
  NodeRef relu(NodeRef a);
  NodeRef column_softmax(NodeRef a);
  NodeRef column_normalize(NodeRef a);
  NodeRef hconcat(NodeRef a, NodeRef b);
  NodeRef slice_cols(NodeRef a, Index start, Index count);
  NodeRef slice_rows(NodeRef a, Index start, Index count);
  NodeRef squared_error(NodeRef prediction, NodeRef target);

  const Matrix& value(NodeRef n) const;
  double scalar(NodeRef n) const;
  Op op(NodeRef n) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<NodeRef>& parameters() const noexcept { return parameters_; }

  /// d(loss)/d(parameter) for every parameter. `loss` must be 1 x 1.
  Gradients backward(NodeRef loss) const;

  /// Recomputes every node value from the recorded leaves, in record order.
  std::vector<Matrix> replay() const;

 private:
  struct Node {
    Op op = Op::Constant;
    std::int64_t lhs = -1;
    std::int64_t rhs = -1;
    double factor = 0.0;
    Index start = 0;
    Index count = 0;
    bool needs_grad = false;
    Matrix value;
  };

  NodeRef push(Node node);
  const Node& node(NodeRef n) const;
  static Matrix evaluate(const Node& n, const Matrix* lhs, const Matrix* rhs);

  std::vector<Node> nodes_;
  std::vector<NodeRef> parameters_;
};

/// Central-difference gradient estimate of a scalar function of a list of
/// matrices: (f(theta + h e) - f(theta - h e)) / (2h), one coordinate at a
/// time. Throws NumericalError if any evaluation is non-finite.
std::vector<Matrix> finite_difference_gradient(
    const std::function<double(const std::vector<Matrix>&)>& f, const std::vector<Matrix>& theta,
    double step = 1e-6);

/// Largest per-matrix relative discrepancy between two gradient lists,
/// ||a - b||_F / max(||a||_F, ||b||_F, floor).
double max_relative_discrepancy(const std::vector<Matrix>& a, const std::vector<Matrix>& b,
                                double floor = 1e-6);

}  // namespace icl
