#include <doctest.h>

#include "icl/rng.hpp"
#include "icl/tape.hpp"

#include <cmath>

using namespace icl;

TEST_CASE("squared error at its minimum has zero gradient") {
  SeededRng rng(1);
  const Vector x = rng.normal_vector(4);
  Tape t;
  const NodeRef w = t.parameter(Matrix::Identity(4, 4));
  const NodeRef loss = t.squared_error(t.matmul(w, t.constant(x)), t.constant(x));
  CHECK(t.scalar(loss) == 0.0);
  CHECK(t.backward(loss).by_parameter[0].isZero(0.0));
}

TEST_CASE("gradient of <a, W b> is a outer b") {
  SeededRng rng(2);
  const Vector a = rng.normal_vector(3);
  const Vector b = rng.normal_vector(5);
  Tape t;
  const NodeRef w = t.parameter(rng.normal_matrix(3, 5));
  const NodeRef loss = t.matmul(t.transpose(t.constant(a)), t.matmul(w, t.constant(b)));
  const Matrix g = t.backward(loss).by_parameter[0];
  CHECK((g - a * b.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("finite differences on simple functions") {
  const auto square = [](const std::vector<Matrix>& p) { return p[0](0, 0) * p[0](0, 0); };
  const auto g = finite_difference_gradient(square, {Matrix::Constant(1, 1, 3.0)}, 1e-6);
  CHECK(std::abs(g[0](0, 0) - 6.0) < 1e-6);

  const auto linear = [](const std::vector<Matrix>& p) { return 2.0 * p[0](0, 0) - 5.0 * p[0](1, 0); };
  for (double h : {1e-3, 0.5, 4.0}) {
    const auto gl = finite_difference_gradient(linear, {Matrix::Zero(2, 1)}, h);
    CHECK(std::abs(gl[0](0, 0) - 2.0) < 1e-12);
    CHECK(std::abs(gl[0](1, 0) + 5.0) < 1e-12);
  }
  CHECK_THROWS_AS(finite_difference_gradient(square, {Matrix::Zero(1, 1)}, 0.0), ValidationError);
  const auto bad = [](const std::vector<Matrix>&) { return std::nan(""); };
  CHECK_THROWS_AS(finite_difference_gradient(bad, {Matrix::Zero(1, 1)}), NumericalError);
}

namespace {

// Exercises every primitive in one scalar loss.
NodeRef build_everything(Tape& t, const std::vector<Matrix>& p, const Matrix& x, const Matrix& y) {
  const NodeRef a = t.parameter(p[0]);  // 4 x 3
  const NodeRef b = t.parameter(p[1]);  // 4 x 1
  const NodeRef c = t.parameter(p[2]);  // 1 x 5
  const NodeRef xs = t.constant(x);     // 3 x 5
  NodeRef z = t.add_col_broadcast(t.matmul(a, xs), b);
  z = t.add_row_broadcast(z, c);
  const NodeRef e1 = t.exp(t.scale(z, 0.3));
  const NodeRef e2 = t.elu(z);
  const NodeRef e3 = t.gelu(t.sub(z, e2));
  const NodeRef e4 = t.relu(t.add(z, t.constant(Matrix::Constant(4, 5, 0.1))));
  const NodeRef sm = t.column_softmax(t.hadamard(e2, e4));
  const NodeRef nm = t.column_normalize(e1);
  const NodeRef sq = t.column_sq_norms(e3);  // 1 x 5
  const NodeRef joined = t.hconcat(sm, nm);  // 4 x 10
  const NodeRef part = t.slice_rows(t.slice_cols(joined, 2, 5), 1, 2);  // 2 x 5
  const NodeRef out = t.add_row_broadcast(part, t.scale(sq, 0.05));
  return t.squared_error(t.transpose(out), t.constant(y));
}

}  // namespace

TEST_CASE("backward matches finite differences over every primitive") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SeededRng rng(100 + seed);
    const Matrix x = rng.normal_matrix(3, 5);
    const Matrix y = rng.normal_matrix(5, 2);
    const std::vector<Matrix> p{rng.normal_matrix(4, 3, 0.7), rng.normal_matrix(4, 1, 0.5),
                                rng.normal_matrix(1, 5, 0.5)};
    Tape t;
    const NodeRef loss = build_everything(t, p, x, y);
    const auto analytic = t.backward(loss).by_parameter;
    const auto f = [&](const std::vector<Matrix>& q) {
      Tape s;
      return s.scalar(build_everything(s, q, x, y));
    };
    const auto numeric = finite_difference_gradient(f, p, 1e-6);
    CHECK(max_relative_discrepancy(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("replay reproduces forward values bit-exactly") {
  SeededRng rng(3);
  const Matrix x = rng.normal_matrix(3, 5);
  const Matrix y = rng.normal_matrix(5, 2);
  const std::vector<Matrix> p{rng.normal_matrix(4, 3), rng.normal_matrix(4, 1),
                              rng.normal_matrix(1, 5)};
  Tape t;
  build_everything(t, p, x, y);
  const auto values = t.replay();
  REQUIRE(values.size() == t.size());
  for (std::uint32_t i = 0; i < t.size(); ++i) CHECK(values[i] == t.value(NodeRef{i}));
}

TEST_CASE("backward visits each contributing node once") {
  Tape t;
  const NodeRef w = t.parameter(Matrix::Constant(2, 2, 0.5));
  const NodeRef unused = t.parameter(Matrix::Ones(3, 3));
  const NodeRef sq = t.matmul(w, w);
  const NodeRef twice = t.add(sq, sq);
  const NodeRef loss = t.squared_error(twice, t.constant(Matrix::Zero(2, 2)));
  const Tape::Gradients g = t.backward(loss);
  CHECK(g.nodes_visited == 4);  // loss, twice, sq, w
  CHECK(g.by_parameter[1].isZero(0.0));
  CHECK(g.by_parameter[1].rows() == 3);
  // d/dW of ||2 W W||^2 at W = 0.5 * ones(2): 8 (W W W^T + W^T W W) summed = 8 * (0.5 + 0.5)
  CHECK((g.by_parameter[0].array() - 8.0).abs().maxCoeff() < 1e-14);
  (void)unused;
}

TEST_CASE("backward requires a scalar loss and shapes are checked") {
  Tape t;
  const NodeRef w = t.parameter(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(w), ValidationError);
  CHECK_THROWS_AS(t.matmul(w, t.constant(Matrix::Ones(3, 1))), ValidationError);
  CHECK_THROWS_AS(t.add(w, t.constant(Matrix::Ones(2, 3))), ValidationError);
  CHECK_THROWS_AS(t.slice_cols(w, 1, 2), ValidationError);
  CHECK_THROWS_AS(t.value(NodeRef{99}), ValidationError);
}

TEST_CASE("max_relative_discrepancy") {
  const std::vector<Matrix> a{Matrix::Ones(2, 2)};
  const std::vector<Matrix> b{Matrix::Ones(2, 2) * 1.1};
  CHECK(max_relative_discrepancy(a, a) == 0.0);
  CHECK(max_relative_discrepancy(a, b) == doctest::Approx(0.2 / 2.2));
}
