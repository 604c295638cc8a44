#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "ofl/ofl.hpp"
#include "support.hpp"

using ofl::Basis;
using ofl::Box;
using ofl::IndexKind;
using ofl::IndexSet;
using ofl::InnerProductOrder;
using ofl::Matrix;
using ofl::Polynomial1D;
using ofl::Vector;

TEST_CASE("full index set enumerates (n+1)^d multi-indices lexicographically") {
  const IndexSet set = IndexSet::full(2, 2);
  REQUIRE(set.size() == 9);
  REQUIRE(set.indices.front() == std::vector<int>{0, 0});
  REQUIRE(set.indices[1] == std::vector<int>{0, 1});
  REQUIRE(set.indices.back() == std::vector<int>{2, 2});
  for (std::size_t i = 1; i < set.indices.size(); ++i) {
    REQUIRE(set.indices[i - 1] < set.indices[i]);
  }
}

TEST_CASE("hyperbolic cross matches exhaustive enumeration") {
  const IndexSet set = IndexSet::hyperbolic(3, 2);
  std::vector<std::vector<int>> expected;
  for (int a = 0; a <= 3; ++a) {
    for (int b = 0; b <= 3; ++b) {
      if ((a + 1) * (b + 1) <= 3) expected.push_back({a, b});
    }
  }
  std::sort(expected.begin(), expected.end());
  REQUIRE(set.indices == expected);
  REQUIRE(set.size() == 5);
  REQUIRE(IndexSet::hyperbolic(1, 2).indices == std::vector<std::vector<int>>{{0, 0}});
}

TEST_CASE("hyperbolic cross is a subset of the full set and contains zero") {
  for (int n : {2, 5, 9}) {
    const IndexSet hyper = IndexSet::hyperbolic(n, 3);
    const IndexSet full = IndexSet::full(n, 3);
    REQUIRE(std::find(hyper.indices.begin(), hyper.indices.end(), std::vector<int>{0, 0, 0}) != hyper.indices.end());
    for (const auto& alpha : hyper.indices) {
      REQUIRE(std::find(full.indices.begin(), full.indices.end(), alpha) != full.indices.end());
    }
  }
}

TEST_CASE("lowest-degree members have the closed forms of the symbolic inner product") {
  const Polynomial1D p10(1, 0);
  REQUIRE(p10.eval(0, 0.3) == Catch::Approx(1.0).margin(1e-14));

  const Polynomial1D p11(1, 1);
  const double slope = std::sqrt(3.0) / 2.0;
  for (double x : {-0.9, -0.25, 0.0, 0.6, 1.0}) {
    REQUIRE(p11.eval(1, x) == Catch::Approx(slope * x).margin(1e-13));
    REQUIRE(p11.eval(1, x, 1) == Catch::Approx(slope).margin(1e-13));
  }

  const Polynomial1D p21(2, 1);
  for (double x : {-0.7, 0.1, 0.8}) {
    REQUIRE(p21.eval(1, x) == Catch::Approx(slope * x).margin(1e-13));
  }
}

TEST_CASE("1-D family is orthonormal under quadrature of the evaluated functions") {
  for (int k : {1, 2}) {
    for (int n : {5, 17, 33}) {
      const Polynomial1D poly(k, n);
      REQUIRE(test_support::gram_defect(poly, k) < 1e-8);
    }
  }
}

namespace {

Basis benchmark_basis(int k, int n, IndexKind kind = IndexKind::full) {
  return Basis(InnerProductOrder{k}, IndexSet::make(kind, n, 2), Box({{-6.0, 6.0}, {-3.0, 3.0}}));
}

}  // namespace

TEST_CASE("zero and constant coefficient fields") {
  const Basis basis = benchmark_basis(1, 3);
  Vector theta = Vector::Zero(basis.size());
  Vector y(2);
  y << 1.5, -0.5;
  REQUIRE(basis.eval(theta, y) == 0.0);
  REQUIRE(basis.eval_grad(theta, y).norm() == 0.0);
  REQUIRE(basis.eval_hess(theta, y).norm() == 0.0);

  theta[0] = 2.5;  // constant function component
  REQUIRE(basis.eval_grad(theta, y).norm() == 0.0);
}

TEST_CASE("gradient and Hessian match finite differences of eval") {
  const Basis basis = benchmark_basis(2, 6);
  std::mt19937 rng = test_support::seeded_rng(42);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector theta(basis.size());
    for (int i = 0; i < theta.size(); ++i) theta[i] = unit(rng);
    Vector y(2);
    y << 5.0 * unit(rng), 2.5 * unit(rng);
    const Vector grad = basis.eval_grad(theta, y);
    const double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-6);
    for (int i = 0; i < 2; ++i) {
      const double fd = test_support::central_diff(
          [&](double x) {
            Vector yp = y;
            yp[i] = x;
            return basis.eval(theta, yp);
          },
          y[i], 1e-5);
      REQUIRE(std::abs(grad[i] - fd) <= 1e-6 * std::max(scale, std::abs(fd)));
    }
    const Matrix hess = basis.eval_hess(theta, y);
    const double hscale = std::max(hess.cwiseAbs().maxCoeff(), 1e-6);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        const double fd = test_support::central_diff(
            [&](double x) {
              Vector yp = y;
              yp[j] = x;
              return basis.eval_grad(theta, yp)[i];
            },
            y[j], 1e-5);
        REQUIRE(std::abs(hess(i, j) - fd) <= 1e-4 * std::max(hscale, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("evaluation is invariant under the box affine map") {
  const Basis reference(InnerProductOrder{1}, IndexSet::full(4, 2), Box({{-1.0, 1.0}, {-1.0, 1.0}}));
  const Basis mapped = benchmark_basis(1, 4);
  std::mt19937 rng = test_support::seeded_rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    Vector xi(2);
    xi << unit(rng), unit(rng);
    Vector x(2);
    x << 6.0 * xi[0], 3.0 * xi[1];
    const Vector phi_ref = reference.functions(xi);
    const Vector phi_map = mapped.functions(x);
    REQUIRE((phi_ref - phi_map).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("batched tables agree with scalar evaluation") {
  const Basis basis = benchmark_basis(2, 8);
  std::mt19937 rng = test_support::seeded_rng(11);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int P = 17;
  Matrix Y(2, P);
  for (int p = 0; p < P; ++p) {
    Y(0, p) = 5.5 * unit(rng);
    Y(1, p) = 2.7 * unit(rng);
  }
  Vector theta(basis.size());
  for (int i = 0; i < theta.size(); ++i) theta[i] = unit(rng);

  ofl::BasisBatch batch(basis, P);
  batch.load(Y, P, 2);
  Eigen::VectorXd values(P);
  batch.field_values(theta, values);
  Matrix grads(2, P);
  batch.field_grads(theta, grads);
  Matrix hess(3, P);
  batch.field_hessians_packed(theta, hess);
  for (int p = 0; p < P; ++p) {
    const Vector y = Y.col(p);
    REQUIRE(values[p] == Catch::Approx(basis.eval(theta, y)).margin(1e-11));
    REQUIRE((grads.col(p) - basis.eval_grad(theta, y)).cwiseAbs().maxCoeff() < 1e-11);
    const Matrix h = ofl::unpack_hessian(hess.col(p), 2);
    REQUIRE((h - basis.eval_hess(theta, y)).cwiseAbs().maxCoeff() < 1e-10);
  }

  // grad-dot accumulation against explicit per-function gradients
  Matrix weights(2, P);
  for (int p = 0; p < P; ++p) {
    weights(0, p) = unit(rng);
    weights(1, p) = unit(rng);
  }
  Vector acc = Vector::Zero(basis.size());
  batch.accumulate_grad_dots(weights, acc);
  Vector expected = Vector::Zero(basis.size());
  for (int p = 0; p < P; ++p) {
    expected += basis.function_grads(Y.col(p)) * weights.col(p);
  }
  REQUIRE((acc - expected).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
}

TEST_CASE("points outside the box are rejected") {
  const Basis basis = benchmark_basis(1, 2);
  Vector theta = Vector::Zero(basis.size());
  Vector y(2);
  y << 6.5, 0.0;
  REQUIRE_THROWS_AS(basis.eval(theta, y), std::domain_error);
  REQUIRE_THROWS_AS(basis.eval_grad(theta, y), std::domain_error);
}

TEST_CASE("degenerate boxes and invalid degree bounds are rejected") {
  REQUIRE_THROWS_AS(Box({{2.0, 2.0}}), std::invalid_argument);
  REQUIRE_THROWS_AS(Basis(InnerProductOrder{1}, IndexSet::full(61, 1), Box({{-1.0, 1.0}})), std::invalid_argument);
  REQUIRE_THROWS_AS(IndexSet::hyperbolic(0, 2), std::invalid_argument);
}

TEST_CASE("serialization round trip preserves coefficients bit for bit") {
  const Basis basis = benchmark_basis(2, 5, IndexKind::hyperbolic);
  std::mt19937 rng = test_support::seeded_rng(3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector theta(basis.size());
  for (int i = 0; i < theta.size(); ++i) theta[i] = std::ldexp(unit(rng), -3);

  std::stringstream ss;
  ofl::save_basis(ss, basis, theta, {{"method", "afls"}, {"gamma", "1"}});
  ofl::BasisFile loaded = ofl::load_basis(ss);
  REQUIRE(loaded.basis.order() == 2);
  REQUIRE(loaded.basis.index_set().kind == IndexKind::hyperbolic);
  REQUIRE(loaded.basis.size() == basis.size());
  REQUIRE(loaded.metadata.at("method") == "afls");
  for (int i = 0; i < theta.size(); ++i) REQUIRE(loaded.theta[i] == theta[i]);

  Vector y(2);
  y << 0.77, -1.3;
  REQUIRE(loaded.basis.eval(loaded.theta, y) == basis.eval(theta, y));
}
