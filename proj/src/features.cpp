#include "icl/features.hpp"

#include <cmath>
#include <string>

namespace icl {

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::PositiveRandom:
      return "prf";
    case FeatureKind::EluPlusOne:
      return "elu";
  }
  return "?";
}

FeatureKind parse_feature_kind(std::string_view name) {
  if (name == "prf" || name == "positive_random") return FeatureKind::PositiveRandom;
  if (name == "elu" || name == "elu_plus_one") return FeatureKind::EluPlusOne;
  throw ValidationError("unknown feature map '" + std::string(name) + "' (expected prf or elu)");
}

FeatureMap::FeatureMap(FeatureKind kind, Index input_dim, Index feature_dim, Matrix omega)
    : kind_(kind), input_dim_(input_dim), feature_dim_(feature_dim), omega_(std::move(omega)) {}

FeatureMap FeatureMap::positive_random(Index input_dim, Index feature_dim, SeededRng& rng) {
  require(input_dim >= 1 && feature_dim >= 1, "positive_random: dimensions must be positive");
  return positive_random(rng.normal_matrix(feature_dim, input_dim));
}

FeatureMap FeatureMap::positive_random(Matrix omega) {
  require(omega.rows() >= 1 && omega.cols() >= 1, "positive_random: empty draw matrix");
  require_finite(omega, "positive_random draw matrix");
  const Index d_r = omega.rows();
  const Index d_o = omega.cols();
  return FeatureMap(FeatureKind::PositiveRandom, d_o, d_r, std::move(omega));
}

FeatureMap FeatureMap::elu_plus_one(Index input_dim) {
  require(input_dim >= 1, "elu_plus_one: dimension must be positive");
  return FeatureMap(FeatureKind::EluPlusOne, input_dim, input_dim, Matrix());
}

Matrix FeatureMap::log_features(const Matrix& columns) const {
  Matrix logits = unscaled_logits(columns);
  logits.array() -= 0.5 * std::log(static_cast<double>(feature_dim_));
  return logits;
}

Matrix FeatureMap::unscaled_logits(const Matrix& columns) const {
  if (kind_ != FeatureKind::PositiveRandom)
    throw UnsupportedVariantError("log_features: only defined for positive random features");
  require(columns.rows() == input_dim_, "feature map: input dimension mismatch");
  require_finite(columns, "feature map input");
  Matrix logits = omega_ * columns;
  logits.rowwise() -= 0.5 * columns.colwise().squaredNorm();
  return logits;
}

Matrix FeatureMap::apply(const Matrix& columns) const {
  require(columns.rows() == input_dim_, "feature map: input dimension mismatch");
  require_finite(columns, "feature map input");
  if (kind_ == FeatureKind::EluPlusOne)
    return columns.unaryExpr([](double x) { return icl::elu(x) + 1.0; });

  Matrix logits = unscaled_logits(columns);
  const double inv_root = 1.0 / std::sqrt(static_cast<double>(feature_dim_));
  for (Index j = 0; j < logits.cols(); ++j) {
    const double peak = logits.col(j).maxCoeff();
    if (peak > kMaxExponent)
      throw RangeError("feature map: exponent " + std::to_string(peak) + " overflows float64");
    const double carried = std::exp(peak) * inv_root;
    if (carried == 0.0)
      throw RangeError("feature map: exponent " + std::to_string(peak) + " underflows float64");
    logits.col(j) = ((logits.col(j).array() - peak).exp() * carried).matrix();
  }
  return logits;
}

Vector FeatureMap::apply(const Vector& x) const {
  return apply(Matrix(x)).col(0);
}

double FeatureMap::kernel(const Vector& x, const Vector& y) const {
  return apply(x).dot(apply(y));
}

double softmax_kernel_exact(const Vector& x, const Vector& y) {
  require(x.size() == y.size(), "softmax_kernel_exact: dimension mismatch");
  const double s = x.dot(y);
  if (!std::isfinite(s) || std::abs(s) > kMaxExponent)
    throw RangeError("softmax_kernel_exact: exponent " + std::to_string(s) + " out of range");
  return std::exp(s);
}

double softmax_kernel_gaussian_form(const Vector& x, const Vector& y) {
  require(x.size() == y.size(), "softmax_kernel_gaussian_form: dimension mismatch");
  return std::exp(0.5 * (x.squaredNorm() + y.squaredNorm())) *
         std::exp(-0.5 * (x - y).squaredNorm());
}

AttentionApproxReport attention_approx_report(const Matrix& tokens, const Matrix& key_weights,
                                              const Matrix& query_weights,
                                              const FeatureMap& features) {
  require(tokens.cols() >= 1, "attention_approx_report: need at least one token");
  require(key_weights.cols() == tokens.rows() && query_weights.cols() == tokens.rows(),
          "attention_approx_report: projection input dimension mismatch");
  require(key_weights.rows() == query_weights.rows(),
          "attention_approx_report: key/query output dimension mismatch");
  require(features.input_dim() == key_weights.rows(),
          "attention_approx_report: feature map input dimension mismatch");
  require_finite(tokens, "attention_approx_report tokens");

  const double d_o = static_cast<double>(key_weights.rows());
  const double temper = std::pow(d_o, -0.25);
  const Matrix keys = temper * key_weights * tokens;
  const Matrix queries = temper * query_weights * tokens;

  AttentionApproxReport report;
  report.exact = column_softmax(keys.transpose() * queries);
  report.approx = column_normalize(features.apply(keys).transpose() * features.apply(queries));
  require_finite(report.approx, "attention_approx_report estimate");
  const Matrix diff = report.approx - report.exact;
  const double count = static_cast<double>(diff.size());
  report.mse = diff.squaredNorm() / count;
  report.mae = diff.cwiseAbs().sum() / count;
  return report;
}

UnbiasednessProbe unbiasedness_probe(const FeatureMap& features, const Vector& x, const Vector& y,
                                     std::size_t trials, SeededRng& rng) {
  if (features.kind() != FeatureKind::PositiveRandom)
    throw UnsupportedVariantError(
        "unbiasedness_probe: elu+1 is not an unbiased estimator of the softmax kernel");
  require(trials >= 2, "unbiasedness_probe: need at least two trials");
  require(x.size() == features.input_dim() && y.size() == features.input_dim(),
          "unbiasedness_probe: dimension mismatch");

  UnbiasednessProbe probe;
  probe.trials = trials;
  probe.target = softmax_kernel_exact(x, y);
  // Welford accumulation keeps the zero-variance case exactly zero.
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const FeatureMap draw =
        FeatureMap::positive_random(features.input_dim(), features.feature_dim(), rng);
    const double value = draw.kernel(x, y);
    const double delta = value - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (value - mean);
  }
  const double n = static_cast<double>(trials);
  probe.mean = mean;
  probe.standard_error = std::sqrt(m2 / (n - 1.0) / n);
  return probe;
}

}  // namespace icl
