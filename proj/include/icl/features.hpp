#pragma once

#include "icl/numerics.hpp"
#include "icl/rng.hpp"

#include <cstddef>

namespace icl {

enum class FeatureKind { PositiveRandom, EluPlusOne };

const char* to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);

/// A strictly positive feature map phi with <phi(x), phi(y)> ~ exp(x^T y).
///
/// PositiveRandom: phi(x) = exp(Omega x - |x|^2/2) / sqrt(d_r), Omega with
/// i.i.d. N(0, 1) rows. The 1/sqrt(d_r) factor makes the inner product the
/// empirical mean over draws; it cancels after column normalization.
/// EluPlusOne: phi(x) = elu(x) + 1 elementwise, d_r = d_o.
class FeatureMap {
 public:
  static FeatureMap positive_random(Index input_dim, Index feature_dim, SeededRng& rng);
  static FeatureMap positive_random(Matrix omega);
  static FeatureMap elu_plus_one(Index input_dim);

  FeatureKind kind() const noexcept { return kind_; }
  Index input_dim() const noexcept { return input_dim_; }
  Index feature_dim() const noexcept { return feature_dim_; }
  /// Draw matrix (feature_dim x input_dim); empty for EluPlusOne.
  const Matrix& omega() const noexcept { return omega_; }

  /// log phi(x) for every column; PositiveRandom only.
  Matrix log_features(const Matrix& columns) const;

  /// phi applied to every column. PRF columns are exponentiated after
  /// subtracting the column maximum, and the maximum is multiplied back; a
  /// maximum above the float64 exponent range is a RangeError.
  Matrix apply(const Matrix& columns) const;
  Vector apply(const Vector& x) const;

  /// Kernel estimate <phi(x), phi(y)>.
  double kernel(const Vector& x, const Vector& y) const;

 private:
  FeatureMap(FeatureKind kind, Index input_dim, Index feature_dim, Matrix omega);
  Matrix unscaled_logits(const Matrix& columns) const;

  FeatureKind kind_;
  Index input_dim_;
  Index feature_dim_;
  Matrix omega_;
};

/// exp(x^T y). RangeError when |x^T y| exceeds the float64 exponent range.
double softmax_kernel_exact(const Vector& x, const Vector& y);

/// exp((|x|^2 + |y|^2)/2) * exp(-|x - y|^2/2), the Gaussian-kernel form of the
/// same quantity.
double softmax_kernel_gaussian_form(const Vector& x, const Vector& y);

struct AttentionApproxReport {
  Matrix exact;
  Matrix approx;
  double mse = 0.0;
  double mae = 0.0;
};

/// Exact attention block softmax((W_K X)^T W_Q X / sqrt(d_o)) against its
/// feature-map estimate. The sqrt(d_o) temperature is folded into the
/// estimate by scaling projected keys and queries by d_o^{-1/4}.
AttentionApproxReport attention_approx_report(const Matrix& tokens, const Matrix& key_weights,
                                              const Matrix& query_weights,
                                              const FeatureMap& features);

struct UnbiasednessProbe {
  double mean = 0.0;
  double standard_error = 0.0;
  double target = 0.0;
  std::size_t trials = 0;
};

/// Monte Carlo mean of <phi(x), phi(y)> over `trials` fresh PRF draws with the
/// dimensions of `features`, against exp(x^T y).
UnbiasednessProbe unbiasedness_probe(const FeatureMap& features, const Vector& x, const Vector& y,
                                     std::size_t trials, SeededRng& rng);

}  // namespace icl
