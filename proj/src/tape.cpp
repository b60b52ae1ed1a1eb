#include "icl/tape.hpp"

#include <cassert>
#include <cmath>
#include <string>

namespace icl {
namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError(std::string("tape ") + op + ": shape mismatch " +
                          std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  return a.unaryExpr(f);
}

}  // namespace

Matrix Tape::evaluate(const Node& n, const Matrix* lhs, const Matrix* rhs) {
  switch (n.op) {
    case Op::Constant:
    case Op::Parameter:
      return n.value;
    case Op::MatMul:
      if (lhs->cols() != rhs->rows()) throw ValidationError("tape matmul: inner dimension mismatch");
      return (*lhs) * (*rhs);
    case Op::Transpose:
      return lhs->transpose();
    case Op::Add:
      check_same_shape(*lhs, *rhs, "add");
      return *lhs + *rhs;
    case Op::Sub:
      check_same_shape(*lhs, *rhs, "sub");
      return *lhs - *rhs;
    case Op::Hadamard:
      check_same_shape(*lhs, *rhs, "hadamard");
      return lhs->cwiseProduct(*rhs);
    case Op::Scale:
      return n.factor * (*lhs);
    case Op::AddColBroadcast:
      if (rhs->cols() != 1 || rhs->rows() != lhs->rows())
        throw ValidationError("tape add_col_broadcast: expected a matching column");
      return lhs->colwise() + rhs->col(0);
    case Op::AddRowBroadcast:
      if (rhs->rows() != 1 || rhs->cols() != lhs->cols())
        throw ValidationError("tape add_row_broadcast: expected a matching row");
      return lhs->rowwise() + rhs->row(0);
    case Op::ColumnSqNorms:
      return lhs->colwise().squaredNorm();
    case Op::Exp:
      return lhs->array().exp().matrix();
    case Op::Elu:
      return map(*lhs, [](double x) { return icl::elu(x); });
    case Op::Gelu:
      return map(*lhs, [](double x) { return icl::gelu(x); });
    case Op::Relu:
      return map(*lhs, [](double x) { return icl::relu(x); });
    case Op::ColumnSoftmax:
      return icl::column_softmax(*lhs);
    case Op::ColumnNormalize:
      return icl::column_normalize(*lhs);
    case Op::HConcat: {
      if (lhs->rows() != rhs->rows()) throw ValidationError("tape hconcat: row mismatch");
      Matrix out(lhs->rows(), lhs->cols() + rhs->cols());
      out << *lhs, *rhs;
      return out;
    }
    case Op::SliceCols:
      if (n.start < 0 || n.count < 0 || n.start + n.count > lhs->cols())
        throw ValidationError("tape slice_cols: out of range");
      return lhs->middleCols(n.start, n.count);
    case Op::SliceRows:
      if (n.start < 0 || n.count < 0 || n.start + n.count > lhs->rows())
        throw ValidationError("tape slice_rows: out of range");
      return lhs->middleRows(n.start, n.count);
    case Op::SquaredError: {
      check_same_shape(*lhs, *rhs, "squared_error");
      Matrix out(1, 1);
      out(0, 0) = (*lhs - *rhs).squaredNorm();
      return out;
    }
  }
  throw Error("tape: unknown op");
}

NodeRef Tape::push(Node n) {
  const auto id = static_cast<std::int64_t>(nodes_.size());
  assert(n.lhs < id && n.rhs < id);
  if (n.op != Op::Constant && n.op != Op::Parameter) {
    const Matrix* lhs = n.lhs >= 0 ? &nodes_[n.lhs].value : nullptr;
    const Matrix* rhs = n.rhs >= 0 ? &nodes_[n.rhs].value : nullptr;
    n.value = evaluate(n, lhs, rhs);
    n.needs_grad = (n.lhs >= 0 && nodes_[n.lhs].needs_grad) ||
                   (n.rhs >= 0 && nodes_[n.rhs].needs_grad);
  }
  nodes_.push_back(std::move(n));
  return NodeRef{static_cast<std::uint32_t>(id)};
}

const Tape::Node& Tape::node(NodeRef n) const {
  if (n.id >= nodes_.size()) throw ValidationError("tape: node reference out of range");
  return nodes_[n.id];
}

NodeRef Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeRef Tape::parameter(Matrix value) {
  Node n;
  n.op = Op::Parameter;
  n.value = std::move(value);
  n.needs_grad = true;
  const NodeRef ref = push(std::move(n));
  parameters_.push_back(ref);
  return ref;
}

#define ICL_UNARY(name, OPCODE)       \
  NodeRef Tape::name(NodeRef a) {     \
    node(a);                          \
    Node n;                           \
    n.op = Op::OPCODE;                \
    n.lhs = a.id;                     \
    return push(std::move(n));        \
  }
#define ICL_BINARY(name, OPCODE)            \
  NodeRef Tape::name(NodeRef a, NodeRef b) { \
    node(a);                                 \
    node(b);                                 \
    Node n;                                  \
    n.op = Op::OPCODE;                       \
    n.lhs = a.id;                            \
    n.rhs = b.id;                            \
    return push(std::move(n));               \
  }

ICL_BINARY(matmul, MatMul)
ICL_UNARY(transpose, Transpose)
ICL_BINARY(add, Add)
ICL_BINARY(sub, Sub)
ICL_BINARY(hadamard, Hadamard)
ICL_BINARY(add_col_broadcast, AddColBroadcast)
ICL_BINARY(add_row_broadcast, AddRowBroadcast)
ICL_UNARY(column_sq_norms, ColumnSqNorms)
ICL_UNARY(exp, Exp)
ICL_UNARY(elu, Elu)
ICL_UNARY(gelu, Gelu)
ICL_UNARY(relu, Relu)
ICL_UNARY(column_softmax, ColumnSoftmax)
ICL_UNARY(column_normalize, ColumnNormalize)
ICL_BINARY(hconcat, HConcat)
ICL_BINARY(squared_error, SquaredError)

#undef ICL_UNARY
#undef ICL_BINARY

NodeRef Tape::scale(NodeRef a, double factor) {
  node(a);
  Node n;
  n.op = Op::Scale;
  n.lhs = a.id;
  n.factor = factor;
  return push(std::move(n));
}

NodeRef Tape::slice_cols(NodeRef a, Index start, Index count) {
  node(a);
  Node n;
  n.op = Op::SliceCols;
  n.lhs = a.id;
  n.start = start;
  n.count = count;
  return push(std::move(n));
}

NodeRef Tape::slice_rows(NodeRef a, Index start, Index count) {
  node(a);
  Node n;
  n.op = Op::SliceRows;
  n.lhs = a.id;
  n.start = start;
  n.count = count;
  return push(std::move(n));
}

const Matrix& Tape::value(NodeRef n) const { return node(n).value; }

double Tape::scalar(NodeRef n) const {
  const Matrix& v = node(n).value;
  if (v.rows() != 1 || v.cols() != 1) throw ValidationError("tape: node is not scalar");
  return v(0, 0);
}

Tape::Op Tape::op(NodeRef n) const { return node(n).op; }

std::vector<Matrix> Tape::replay() const {
  std::vector<Matrix> values;
  values.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    const Matrix* lhs = n.lhs >= 0 ? &values[n.lhs] : nullptr;
    const Matrix* rhs = n.rhs >= 0 ? &values[n.rhs] : nullptr;
    values.push_back(evaluate(n, lhs, rhs));
  }
  return values;
}

Tape::Gradients Tape::backward(NodeRef loss) const {
  const Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw ValidationError("tape backward: loss node is not scalar");

  std::vector<Matrix> adjoint(nodes_.size());
  adjoint[loss.id] = Matrix::Ones(1, 1);
  Gradients out;

  auto accumulate = [&](std::int64_t id, const Matrix& g) {
    if (id < 0 || !nodes_[id].needs_grad) return;
    if (adjoint[id].size() == 0)
      adjoint[id] = g;
    else
      adjoint[id] += g;
  };

  for (std::int64_t id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.needs_grad || adjoint[id].size() == 0) continue;
    ++out.nodes_visited;
    const Matrix& g = adjoint[id];
    const Matrix* a = n.lhs >= 0 ? &nodes_[n.lhs].value : nullptr;
    const Matrix* b = n.rhs >= 0 ? &nodes_[n.rhs].value : nullptr;
    switch (n.op) {
      case Op::Constant:
      case Op::Parameter:
        break;
      case Op::MatMul:
        if (nodes_[n.lhs].needs_grad) accumulate(n.lhs, g * b->transpose());
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, a->transpose() * g);
        break;
      case Op::Transpose:
        accumulate(n.lhs, g.transpose());
        break;
      case Op::Add:
        accumulate(n.lhs, g);
        accumulate(n.rhs, g);
        break;
      case Op::Sub:
        accumulate(n.lhs, g);
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, -g);
        break;
      case Op::Hadamard:
        if (nodes_[n.lhs].needs_grad) accumulate(n.lhs, g.cwiseProduct(*b));
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, g.cwiseProduct(*a));
        break;
      case Op::Scale:
        accumulate(n.lhs, n.factor * g);
        break;
      case Op::AddColBroadcast:
        accumulate(n.lhs, g);
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, g.rowwise().sum());
        break;
      case Op::AddRowBroadcast:
        accumulate(n.lhs, g);
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, g.colwise().sum());
        break;
      case Op::ColumnSqNorms: {
        Matrix d = 2.0 * (*a);
        for (Index j = 0; j < d.cols(); ++j) d.col(j) *= g(0, j);
        accumulate(n.lhs, d);
        break;
      }
      case Op::Exp:
        accumulate(n.lhs, g.cwiseProduct(n.value));
        break;
      case Op::Elu:
        accumulate(n.lhs, g.cwiseProduct(map(*a, [](double x) { return elu_derivative(x); })));
        break;
      case Op::Gelu:
        accumulate(n.lhs, g.cwiseProduct(map(*a, [](double x) { return gelu_derivative(x); })));
        break;
      case Op::Relu:
        accumulate(n.lhs, g.cwiseProduct(map(*a, [](double x) { return x > 0.0 ? 1.0 : 0.0; })));
        break;
      case Op::ColumnSoftmax: {
        const Matrix& y = n.value;
        Matrix d(y.rows(), y.cols());
        for (Index j = 0; j < y.cols(); ++j) {
          const double inner = y.col(j).dot(g.col(j));
          d.col(j) = y.col(j).cwiseProduct((g.col(j).array() - inner).matrix());
        }
        accumulate(n.lhs, d);
        break;
      }
      case Op::ColumnNormalize: {
        const Matrix& y = n.value;
        Matrix d(y.rows(), y.cols());
        for (Index j = 0; j < y.cols(); ++j) {
          const double s = a->col(j).sum();
          const double inner = y.col(j).dot(g.col(j));
          d.col(j) = ((g.col(j).array() - inner) / s).matrix();
        }
        accumulate(n.lhs, d);
        break;
      }
      case Op::HConcat:
        accumulate(n.lhs, g.leftCols(a->cols()));
        accumulate(n.rhs, g.rightCols(b->cols()));
        break;
      case Op::SliceCols: {
        if (!nodes_[n.lhs].needs_grad) break;
        Matrix d = Matrix::Zero(a->rows(), a->cols());
        d.middleCols(n.start, n.count) = g;
        accumulate(n.lhs, d);
        break;
      }
      case Op::SliceRows: {
        if (!nodes_[n.lhs].needs_grad) break;
        Matrix d = Matrix::Zero(a->rows(), a->cols());
        d.middleRows(n.start, n.count) = g;
        accumulate(n.lhs, d);
        break;
      }
      case Op::SquaredError: {
        const Matrix diff = 2.0 * g(0, 0) * (*a - *b);
        accumulate(n.lhs, diff);
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, -diff);
        break;
      }
    }
  }

  out.by_parameter.reserve(parameters_.size());
  for (NodeRef p : parameters_) {
    const Matrix& adj = adjoint[p.id];
    const Matrix& v = nodes_[p.id].value;
    out.by_parameter.push_back(adj.size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : adj);
  }
  return out;
}

std::vector<Matrix> finite_difference_gradient(
    const std::function<double(const std::vector<Matrix>&)>& f, const std::vector<Matrix>& theta,
    double step) {
  if (!(step > 0.0)) throw ValidationError("finite_difference_gradient: step must be positive");
  std::vector<Matrix> probe = theta;
  std::vector<Matrix> grad;
  grad.reserve(theta.size());
  for (std::size_t p = 0; p < theta.size(); ++p) {
    Matrix g(theta[p].rows(), theta[p].cols());
    for (Index k = 0; k < theta[p].size(); ++k) {
      const double original = probe[p](k);
      probe[p](k) = original + step;
      const double up = f(probe);
      probe[p](k) = original - step;
      const double down = f(probe);
      probe[p](k) = original;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("finite_difference_gradient: non-finite evaluation");
      g(k) = (up - down) / (2.0 * step);
    }
    grad.push_back(std::move(g));
  }
  return grad;
}

double max_relative_discrepancy(const std::vector<Matrix>& a, const std::vector<Matrix>& b,
                                double floor) {
  if (a.size() != b.size()) throw ValidationError("max_relative_discrepancy: list size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    check_same_shape(a[i], b[i], "max_relative_discrepancy");
    const double scale = std::max({a[i].norm(), b[i].norm(), floor});
    worst = std::max(worst, (a[i] - b[i]).norm() / scale);
  }
  return worst;
}

}  // namespace icl
