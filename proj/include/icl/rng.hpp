#pragma once

#include "icl/numerics.hpp"

#include <cstdint>
#include <random>

namespace icl {

/// Deterministic random source.
///
/// Algorithm: std::mt19937_64 (bit-exact by the C++ standard) seeded with
/// splitmix64(seed ^ splitmix64(stream + golden)). Uniform doubles take the
/// top 53 bits; normals use the Box-Muller transform with both outputs used
/// in order. No std::*_distribution is involved, so a given (seed, stream)
/// yields the same sequence on every conforming platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent generator for sub-stream `index` of this generator's stream.
  SeededRng derive(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Matrix of i.i.d. N(0, scale^2) entries, filled in column-major order.
  Matrix normal_matrix(Index rows, Index cols, double scale = 1.0);
  Vector normal_vector(Index n, double scale = 1.0);
  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi);

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace icl
