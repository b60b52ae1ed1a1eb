#include "icl/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace icl {

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

void require_finite(const Eigen::Ref<const Matrix>& m, std::string_view what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite entry");
}

void require(bool cond, std::string_view message) {
  if (!cond) throw ValidationError(std::string(message));
}

Matrix column_softmax(const Matrix& m) {
  require_finite(m, "column_softmax input");
  Matrix out(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    const double peak = m.col(j).maxCoeff();
    out.col(j) = (m.col(j).array() - peak).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

Matrix column_normalize(const Matrix& m) {
  Matrix out = m;
  for (Index j = 0; j < m.cols(); ++j) {
    const double s = m.col(j).sum();
    if (s == 0.0 || !std::isfinite(s))
      throw DegenerateError("column_normalize: column " + std::to_string(j) + " sums to " +
                            std::to_string(s));
    out.col(j) /= s;
  }
  return out;
}

Matrix outer_product(const Vector& u, const Vector& v) {
  require_finite(u, "outer_product u");
  require_finite(v, "outer_product v");
  return u * v.transpose();
}

Vector singular_values(const Matrix& m) {
  if (m.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues();
}

Index numerical_rank(const Matrix& m, double rel_tol, double abs_tol) {
  const Vector s = singular_values(m);
  if (s.size() == 0 || s(0) <= abs_tol) return 0;
  const double cut = std::max(rel_tol * s(0), abs_tol);
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) ++r;
  return r;
}

double smallest_singular_value(const Matrix& m) {
  const Vector s = singular_values(m);
  return s.size() == 0 ? 0.0 : s(s.size() - 1);
}

double relative_error(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  const double denom = std::max(b.norm(), std::numeric_limits<double>::min());
  return (a - b).norm() / denom;
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace icl
