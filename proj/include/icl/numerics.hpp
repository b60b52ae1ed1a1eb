#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace icl {

// Column-major float64 storage is the single carrier for tokens, weights and
// features throughout the library.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: shapes, ranges, unsupported options. Maps to CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The requested feature map cannot serve the requested operation.
class UnsupportedVariantError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Numerical failure (non-finite values, overflow, singular systems,
/// divergence). Maps to CLI exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class RangeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularSystemError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : NumericalError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Largest x with exp(x) finite in float64.
inline constexpr double kMaxExponent = 709.782712893384;

bool all_finite(const Eigen::Ref<const Matrix>& m);

/// Throws NumericalError naming `what` if any entry is NaN or infinite.
void require_finite(const Eigen::Ref<const Matrix>& m, std::string_view what);

/// Throws ValidationError unless `cond` holds.
void require(bool cond, std::string_view message);

/// Softmax over each column, with per-column max subtraction.
Matrix column_softmax(const Matrix& m);

/// Divides each column by its sum. Throws DegenerateError on a zero sum.
Matrix column_normalize(const Matrix& m);

Matrix outer_product(const Vector& u, const Vector& v);

/// Singular values in decreasing order.
Vector singular_values(const Matrix& m);

/// Count of singular values above `rel_tol` times the largest one (and above
/// an absolute floor of `abs_tol`).
Index numerical_rank(const Matrix& m, double rel_tol = 1e-10, double abs_tol = 1e-300);

double smallest_singular_value(const Matrix& m);

/// ||a - b|| / max(||b||, tiny); the conventional relative distance.
double relative_error(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);

// Scalar activations shared by the attention variants and the tape.
double elu(double x);
double elu_derivative(double x);
/// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf based).
double gelu(double x);
double gelu_derivative(double x);
double relu(double x);

}  // namespace icl
