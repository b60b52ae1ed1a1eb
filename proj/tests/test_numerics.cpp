#include <doctest.h>

#include "icl/numerics.hpp"
#include "icl/rng.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <set>

using namespace icl;

TEST_CASE("column_softmax of a zero column is uniform") {
  const Matrix out = column_softmax(Matrix::Zero(4, 1));
  for (Index i = 0; i < 4; ++i) CHECK(out(i, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("column_softmax is shift invariant per column") {
  Matrix m(3, 2);
  m << 0.3, -1.0, 1.7, 2.0, -0.4, 0.5;
  Matrix shifted = m;
  shifted.col(0).array() += 123.0;
  shifted.col(1).array() -= 50.0;
  const Matrix a = column_softmax(m);
  const Matrix b = column_softmax(shifted);
  // Adding 123 rounds each entry by up to half an ulp of 123.
  CHECK((a - b).cwiseAbs().maxCoeff() < 123.0 * std::numeric_limits<double>::epsilon());
}

TEST_CASE("column_softmax of logs of 1,2,3") {
  Matrix m(3, 1);
  m << std::log(1.0), std::log(2.0), std::log(3.0);
  const Matrix out = column_softmax(m);
  CHECK(std::abs(out(0, 0) - 1.0 / 6.0) < 1e-15);
  CHECK(std::abs(out(1, 0) - 2.0 / 6.0) < 1e-15);
  CHECK(std::abs(out(2, 0) - 3.0 / 6.0) < 1e-15);
}

TEST_CASE("column_softmax columns are convex weights and survive huge scores") {
  SeededRng rng(5);
  Matrix m = rng.normal_matrix(6, 5, 40.0);
  m(0, 0) = 900.0;
  const Matrix out = column_softmax(m);
  CHECK(all_finite(out));
  CHECK(out.minCoeff() >= 0.0);
  for (Index j = 0; j < out.cols(); ++j) CHECK(std::abs(out.col(j).sum() - 1.0) < 1e-12);
}

TEST_CASE("column_softmax rejects non-finite input") {
  Matrix m = Matrix::Zero(2, 2);
  m(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(column_softmax(m), NumericalError);
}

TEST_CASE("column_normalize divides by column sums and rejects zero sums") {
  Matrix m(2, 2);
  m << 1, 2, 3, 2;
  const Matrix out = column_normalize(m);
  CHECK(out(0, 0) == 0.25);
  CHECK(out(1, 1) == 0.5);
  CHECK_THROWS_AS(column_normalize(Matrix::Zero(2, 1)), DegenerateError);
}

TEST_CASE("outer_product examples") {
  Vector e1 = Vector::Zero(3), e2 = Vector::Zero(3);
  e1(0) = 1;
  e2(1) = 1;
  const Matrix b = outer_product(e1, e2);
  CHECK(b(0, 1) == 1.0);
  CHECK(b.sum() == 1.0);
  CHECK(outer_product(Vector::Ones(2), Vector::Zero(3)).isZero(0.0));
  Vector u(2), v(2);
  u << 1, 2;
  v << 3, 4;
  Matrix expected(2, 2);
  expected << 3, 4, 6, 8;
  CHECK(outer_product(u, v) == expected);
}

TEST_CASE("numerical rank and singular values") {
  SeededRng rng(9);
  const Matrix a = rng.normal_matrix(6, 2);
  const Matrix b = rng.normal_matrix(2, 6);
  CHECK(numerical_rank(a * b) == 2);
  CHECK(numerical_rank(Matrix::Identity(5, 5)) == 5);
  CHECK(numerical_rank(Matrix::Zero(3, 3)) == 0);
  const Vector s = singular_values(Matrix::Identity(3, 3) * 2.0);
  CHECK(s(0) == doctest::Approx(2.0));
  CHECK(smallest_singular_value(Matrix::Identity(4, 4) * 0.5) == doctest::Approx(0.5));
}

TEST_CASE("activations") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(2.0) == 2.0);
  CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK(gelu(0.0) == 0.0);
  // x * Phi(x) with Phi(1) = 0.841344746068543
  CHECK(gelu(1.0) == doctest::Approx(0.841344746068543).epsilon(1e-14));
  CHECK(relu(-3.0) == 0.0);
  for (double x : {-2.0, -0.3, 0.4, 1.5}) {
    const double h = 1e-6;
    CHECK(gelu_derivative(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-8));
    CHECK(elu_derivative(x) == doctest::Approx((elu(x + h) - elu(x - h)) / (2 * h)).epsilon(1e-8));
  }
}

TEST_CASE("SeededRng reproduces sequences and separates streams") {
  SeededRng a(42, 3), b(42, 3), c(42, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  const SeededRng root(7);
  SeededRng d1 = root.derive(1), d1b = root.derive(1), d2 = root.derive(2);
  CHECK(d1.next_u64() == d1b.next_u64());
  CHECK(d1.next_u64() != d2.next_u64());
}

TEST_CASE("SeededRng draws") {
  SeededRng rng(1);
  double mean = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  sq /= n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq - 1.0) < 0.02);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-1.0, 1.0);
    CHECK(u >= -1.0);
    CHECK(u < 1.0);
    seen.insert(rng.below(6));
  }
  CHECK(seen.size() == 6);
  CHECK_THROWS_AS(rng.below(0), ValidationError);
}

TEST_CASE("SeededRng first outputs are pinned") {
  CHECK(SeededRng::mix(0, 0) == 5095610196844313600ULL);
  std::mt19937_64 engine(5095610196844313600ULL);
  SeededRng a(0, 0);
  const std::uint64_t first = engine();
  CHECK(a.next_u64() == first);
  CHECK(a.uniform() == static_cast<double>(engine() >> 11) * 0x1.0p-53);
  std::mt19937_64 reference;
  reference.discard(9999);
  CHECK(reference() == 9981545732273789042ULL);
}

TEST_CASE("require_finite and relative_error") {
  Matrix m = Matrix::Ones(2, 2);
  CHECK_NOTHROW(require_finite(m, "m"));
  m(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(require_finite(m, "m"), NumericalError);
  CHECK(relative_error(Matrix::Ones(2, 2), Matrix::Ones(2, 2)) == 0.0);
  CHECK_THROWS_AS(require(false, "nope"), ValidationError);
}
