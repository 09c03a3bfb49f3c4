#include "doctest.h"

#include <random>

#include "costflow/tensor.hpp"

using namespace costflow;

namespace {

Mat randm(int r, int c, std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Finite-difference check of d(sum of f(X)) / dX for a single input matrix.
void check_grad(const Mat& x,
                const std::function<int(Tape&, int)>& build,
                double tol = 1e-5) {
  auto scalarize = [&](Tape& t, int node) {
    // reduce to a 1x1 scalar by weighted sum so every entry matters
    const Mat& v = t.value(node);
    Mat w(v.rows(), v.cols());
    for (int i = 0; i < v.rows(); ++i)
      for (int j = 0; j < v.cols(); ++j) w(i, j) = 0.3 + 0.1 * (i + 2 * j);
    int wn = t.constant(w);
    int prod = t.mul_elem(node, wn);
    std::vector<int> picks;
    for (int i = 0; i < v.rows(); ++i)
      for (int j = 0; j < v.cols(); ++j) picks.push_back(t.pick(prod, i, j));
    return t.sum(picks);
  };
  auto eval = [&](const Mat& xin, Mat* grad) {
    Tape t;
    Mat g = Mat::Zero(xin.rows(), xin.cols());
    int xn = t.param(xin, &g);
    int out = build(t, xn);
    int loss = scalarize(t, out);
    double v = t.value(loss)(0, 0);
    if (grad) {
      t.backward(loss);
      *grad = g;
    }
    return v;
  };
  Mat analytic;
  eval(x, &analytic);
  double eps = 1e-6;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      Mat xp = x, xm = x;
      xp(i, j) += eps;
      xm(i, j) -= eps;
      double fd = (eval(xp, nullptr) - eval(xm, nullptr)) / (2 * eps);
      CHECK(analytic(i, j) == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
}

}  // namespace

TEST_CASE("gradients match finite differences per primitive") {
  std::mt19937 rng(5);
  Mat x = randm(3, 4, rng);
  Mat b = randm(4, 2, rng);
  Mat b34 = randm(3, 4, rng);
  Mat row = randm(1, 4, rng);

  SUBCASE("matmul") {
    check_grad(x, [&](Tape& t, int xn) { return t.matmul(xn, t.constant(b)); });
  }
  SUBCASE("matmul_nt") {
    check_grad(x, [&](Tape& t, int xn) {
      return t.matmul_nt(xn, t.constant(b34));
    });
  }
  SUBCASE("add and scale") {
    check_grad(x, [&](Tape& t, int xn) {
      return t.scale(t.add(xn, t.constant(b34)), 1.7);
    });
  }
  SUBCASE("add_rowvec") {
    check_grad(x, [&](Tape& t, int xn) {
      return t.add_rowvec(xn, t.constant(row));
    });
  }
  SUBCASE("mul_elem") {
    check_grad(x, [&](Tape& t, int xn) {
      return t.mul_elem(xn, t.constant(b34));
    });
  }
  SUBCASE("tanh") {
    check_grad(x, [&](Tape& t, int xn) { return t.tanh_(xn); });
  }
  SUBCASE("relu") {
    check_grad(x, [&](Tape& t, int xn) { return t.relu(xn); }, 1e-4);
  }
  SUBCASE("sigmoid") {
    check_grad(x, [&](Tape& t, int xn) { return t.sigmoid(xn); });
  }
  SUBCASE("softplus") {
    check_grad(x, [&](Tape& t, int xn) { return t.softplus(xn); });
  }
  SUBCASE("layernorm_rows") {
    check_grad(x, [&](Tape& t, int xn) {
      return t.layernorm_rows(xn, t.constant(row), t.constant(row));
    }, 1e-4);
  }
  SUBCASE("softmax_rows unmasked") {
    check_grad(x, [&](Tape& t, int xn) { return t.softmax_rows(xn, -1); },
               1e-4);
  }
  SUBCASE("softmax_rows with additive mask") {
    Mat mask = Mat::Zero(3, 4);
    mask(0, 1) = -1e30;
    mask(2, 3) = -1e30;
    check_grad(x, [&](Tape& t, int xn) {
      return t.softmax_rows(xn, t.constant(mask));
    }, 1e-4);
  }
  SUBCASE("log_softmax_rows") {
    check_grad(x, [&](Tape& t, int xn) { return t.log_softmax_rows(xn); },
               1e-4);
  }
  SUBCASE("slice and concat roundtrip") {
    check_grad(x, [&](Tape& t, int xn) {
      int a = t.slice_cols(xn, 0, 2);
      int c = t.slice_cols(xn, 2, 2);
      return t.concat_cols({a, c});
    });
  }
  SUBCASE("slice_rows / concat_rows") {
    check_grad(x, [&](Tape& t, int xn) {
      int a = t.slice_rows(xn, 0, 1);
      int c = t.slice_rows(xn, 1, 2);
      return t.concat_rows({a, c});
    });
  }
  SUBCASE("neg") {
    check_grad(x, [&](Tape& t, int xn) { return t.neg(xn); });
  }
}

TEST_CASE("gather accumulates into the table gradient, repeats included") {
  Mat table = Mat::Zero(3, 2);
  table << 1, 2, 3, 4, 5, 6;
  Tape t;
  Mat g = Mat::Zero(3, 2);
  int rows = t.gather_rows(table, {1, 1, 0}, &g);
  CHECK(t.value(rows)(0, 0) == 3);
  CHECK(t.value(rows)(2, 1) == 2);
  int sum = t.sum({t.pick(rows, 0, 0), t.pick(rows, 1, 0), t.pick(rows, 2, 1)});
  t.backward(sum);
  CHECK(g(1, 0) == 2.0);  // row 1 gathered twice
  CHECK(g(0, 1) == 1.0);
  CHECK(g(2, 0) == 0.0);
}

TEST_CASE("softmax rows sum to one and respect the mask") {
  Tape t;
  Mat x(2, 3);
  x << 1, 2, 3, 0, 0, 0;
  Mat mask = Mat::Zero(2, 3);
  mask(0, 2) = -1e30;
  int sm = t.softmax_rows(t.constant(x), t.constant(mask));
  const Mat& v = t.value(sm);
  CHECK(v.row(0).sum() == doctest::Approx(1.0));
  CHECK(v.row(1).sum() == doctest::Approx(1.0));
  CHECK(v(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("param leaves accumulate across multiple backward passes") {
  Mat w = Mat::Ones(1, 1);
  Mat g = Mat::Zero(1, 1);
  for (int pass = 0; pass < 3; ++pass) {
    Tape t;
    int wn = t.param(w, &g);
    int loss = t.scale(wn, 2.0);
    t.backward(t.pick(loss, 0, 0));
  }
  CHECK(g(0, 0) == doctest::Approx(6.0));
}
