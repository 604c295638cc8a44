// Shared test oracles, independent of the library's computation paths:
// Gauss-Legendre quadrature, finite differences, and least-squares fitting
// of closed-form fields into a basis.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ofl/ofl.hpp"

namespace test_support {

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on (-1,1), exact for polynomials of degree 2m-1.
inline Quadrature gauss_legendre(int m) {
  Quadrature q;
  q.nodes.resize(static_cast<std::size_t>(m));
  q.weights.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (m + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= m; ++j) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      const double dp = m * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1.0, p1 = x;
    for (int j = 2; j <= m; ++j) {
      const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
      p0 = p1;
      p1 = p2;
    }
    const double dp = m * (x * p1 - p0) / (x * x - 1.0);
    q.nodes[static_cast<std::size_t>(i)] = x;
    q.weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return q;
}

/// Order-k Gram matrix of the 1-D family via Gauss-Legendre quadrature of the
/// evaluated functions (independent of the construction-time Gram matrix).
inline Eigen::MatrixXd sobolev_gram_quadrature(const ofl::Polynomial1D& poly, int k) {
  const int n = poly.degree_bound();
  const Quadrature q = gauss_legendre(std::max(n + 1, 2));
  const int nodes = static_cast<int>(q.nodes.size());
  std::vector<Eigen::MatrixXd> tables(3, Eigen::MatrixXd(nodes, n + 1));
  std::vector<double> v0(static_cast<std::size_t>(n + 1)), v1(static_cast<std::size_t>(n + 1)),
      v2(static_cast<std::size_t>(n + 1));
  for (int a = 0; a < nodes; ++a) {
    poly.eval_all(q.nodes[static_cast<std::size_t>(a)], v0.data(), v1.data(), v2.data());
    for (int j = 0; j <= n; ++j) {
      tables[0](a, j) = v0[static_cast<std::size_t>(j)];
      tables[1](a, j) = v1[static_cast<std::size_t>(j)];
      tables[2](a, j) = v2[static_cast<std::size_t>(j)];
    }
  }
  Eigen::VectorXd w(nodes);
  for (int a = 0; a < nodes; ++a) w[a] = q.weights[static_cast<std::size_t>(a)];
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (int level = 0; level <= k; ++level) {
    gram.noalias() += tables[static_cast<std::size_t>(level)].transpose() * w.asDiagonal() *
                      tables[static_cast<std::size_t>(level)];
  }
  return 0.5 * gram;
}

/// Max deviation of the 1-D Gram matrix from identity under quadrature.
inline double gram_defect(const ofl::Polynomial1D& poly, int k) {
  const int n = poly.degree_bound();
  return (sobolev_gram_quadrature(poly, k) - Eigen::MatrixXd::Identity(n + 1, n + 1)).cwiseAbs().maxCoeff();
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Least-squares fit of a closed-form field into a basis (dense grid sample).
inline ofl::Vector fit_coefficients(const ofl::Basis& basis, const std::function<double(const ofl::Vector&)>& f,
                                    int pts_per_axis = 0) {
  const int n1d = basis.polynomial_1d().degree_bound();
  const int pts = pts_per_axis > 0 ? pts_per_axis : n1d + 3;
  std::vector<int> spec(static_cast<std::size_t>(basis.dim()), pts);
  const auto grid = ofl::cell_centered_grid(basis.box(), spec);
  Eigen::MatrixXd A(static_cast<int>(grid.size()), basis.size());
  Eigen::VectorXd b(static_cast<int>(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    A.row(static_cast<int>(i)) = basis.functions(grid[i]).transpose();
    b[static_cast<int>(i)] = f(grid[i]);
  }
  return A.colPivHouseholderQr().solve(b);
}

/// Coefficients of the small-gamma analytic value function (sqrt(beta)/2)|y|^2.
inline ofl::Vector lqr_coefficients(const ofl::Basis& basis, double beta) {
  const double c = 0.5 * std::sqrt(beta);
  return fit_coefficients(basis, [c](const ofl::Vector& y) { return c * y.squaredNorm(); });
}

inline std::mt19937 seeded_rng(unsigned seed) { return std::mt19937(seed); }

}  // namespace test_support
