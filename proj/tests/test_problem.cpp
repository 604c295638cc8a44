#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "ofl/ofl.hpp"
#include "support.hpp"

using ofl::Matrix;
using ofl::ObstacleParams;
using ofl::Vector;

namespace {

Vector point(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

// Frozen by the 1000^2-per-axis sampling run; refinement to 4000^2 moves the
// value by less than 2e-6 relative.
constexpr double kGammaS = 0.076509667081;

}  // namespace

TEST_CASE("cost reduces to the quadratic baseline away from the obstacle") {
  const ObstacleParams params = ObstacleParams::benchmark(5.0);
  for (const Vector& y : {point(0.5, 0.5), point(3.0, -1.0), point(-2.0, 1.5), point(-4.0, 0.0)}) {
    REQUIRE((y - params.z).norm() >= params.sigma);
    REQUIRE(ofl::obstacle_cost(params, y) == Catch::Approx(0.5 * y.squaredNorm()).margin(1e-15));
    REQUIRE((ofl::obstacle_grad(params, y) - y).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE((ofl::obstacle_hess(params, y) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("cost at the origin and at the obstacle center") {
  const ObstacleParams params = ObstacleParams::benchmark(1.0);
  REQUIRE(ofl::obstacle_cost(params, point(0.0, 0.0)) == 0.0);
  const double expected = 2.0 * (1.0 + std::exp(-1.0));
  REQUIRE(ofl::obstacle_cost(params, params.z) == Catch::Approx(expected).epsilon(1e-14));
}

TEST_CASE("gradient and Hessian match finite differences") {
  const ObstacleParams params = ObstacleParams::benchmark(7.5);
  std::mt19937 rng = test_support::seeded_rng(17);
  std::uniform_real_distribution<double> ux(-4.0, 4.0), uy(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector y = point(ux(rng), uy(rng));
    const Vector grad = ofl::obstacle_grad(params, y);
    const double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-8);
    for (int i = 0; i < 2; ++i) {
      const double fd = test_support::central_diff(
          [&](double x) {
            Vector yp = y;
            yp[i] = x;
            return ofl::obstacle_cost(params, yp);
          },
          y[i], 1e-6);
      REQUIRE(std::abs(grad[i] - fd) <= 1e-6 * std::max(scale, std::abs(fd)));
    }
    const Matrix hess = ofl::obstacle_hess(params, y);
    const double hscale = std::max(hess.cwiseAbs().maxCoeff(), 1e-8);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        const double fd = test_support::central_diff(
            [&](double x) {
              Vector yp = y;
              yp[j] = x;
              return ofl::obstacle_grad(params, yp)[i];
            },
            y[j], 1e-6);
        REQUIRE(std::abs(hess(i, j) - fd) <= 1e-5 * std::max(hscale, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("Hessian is positive definite below the smoothness threshold") {
  const ObstacleParams params = ObstacleParams::benchmark(0.9 * kGammaS);
  std::mt19937 rng = test_support::seeded_rng(23);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector y = point(params.z[0] + 1.4 * unit(rng), 1.4 * unit(rng));
    Vector x = point(unit(rng), unit(rng));
    if (x.norm() < 1e-3) continue;
    REQUIRE(x.dot(ofl::obstacle_hess(params, y) * x) > 0.0);
  }
}

TEST_CASE("minimum Hessian eigenvalue is positive over the obstacle ball") {
  const ObstacleParams params = ObstacleParams::benchmark(0.95 * kGammaS);
  double min_eig = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 200; ++j) {
      const Vector y = point(params.z[0] - 1.0 + 2.0 * i / 199.0, -1.0 + 2.0 * j / 199.0);
      if ((y - params.z).norm() >= params.sigma) continue;
      Eigen::SelfAdjointEigenSolver<Matrix> eig(ofl::obstacle_hess(params, y), Eigen::EigenvaluesOnly);
      min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
    }
  }
  REQUIRE(min_eig > 0.0);
}

TEST_CASE("smoothness threshold matches the frozen high-resolution value") {
  const ObstacleParams params = ObstacleParams::benchmark(1.0);
  const double gs = ofl::gamma_smooth_threshold(params, 1000);
  REQUIRE(gs == Catch::Approx(kGammaS).epsilon(1e-10));
  const double gs2 = ofl::gamma_smooth_threshold(params, 2000);
  REQUIRE(std::abs(gs2 - gs) / gs < 1e-3);
  const auto detailed = ofl::gamma_smooth_threshold_detailed(params, 200);
  REQUIRE(detailed.sup_term_quadratic > detailed.sup_term);  // |y| > 1 on the ball, so the |y|^2/2 variant dominates
}

TEST_CASE("gamma = 0 removes the bump entirely") {
  const ObstacleParams params = ObstacleParams::benchmark(0.0);
  for (const Vector& y : {point(-2.0, 0.0), point(-1.5, 0.2), point(1.0, 1.0)}) {
    REQUIRE(ofl::obstacle_cost(params, y) == Catch::Approx(0.5 * y.squaredNorm()).margin(1e-15));
  }
}

TEST_CASE("cost is nonnegative, continuous across the bump boundary, and monotone in gamma") {
  const ObstacleParams lo = ObstacleParams::benchmark(2.0);
  const ObstacleParams hi = ObstacleParams::benchmark(50.0);
  std::mt19937 rng = test_support::seeded_rng(29);
  std::uniform_real_distribution<double> ux(-5.0, 5.0), uy(-2.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Vector y = point(ux(rng), uy(rng));
    const double c_lo = ofl::obstacle_cost(lo, y);
    REQUIRE(c_lo >= 0.0);
    REQUIRE(ofl::obstacle_cost(hi, y) >= c_lo);
  }
  // the bump contribution at radius sigma(1 +- 1e-8) agrees to 1e-10 across
  // the boundary (the smooth quadratic baseline is subtracted so its own
  // variation between the two sample points does not mask the check)
  const ObstacleParams base = ObstacleParams::benchmark(0.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = angle(rng);
    const Vector dir = point(std::cos(a), std::sin(a));
    const Vector inner = lo.z + lo.sigma * (1.0 - 1e-8) * dir;
    const Vector outer = lo.z + lo.sigma * (1.0 + 1e-8) * dir;
    const double bump_in = ofl::obstacle_cost(lo, inner) - ofl::obstacle_cost(base, inner);
    const double bump_out = ofl::obstacle_cost(lo, outer) - ofl::obstacle_cost(base, outer);
    REQUIRE(std::abs(bump_in - bump_out) < 1e-10);
    const Vector gin = ofl::obstacle_grad(lo, inner) - ofl::obstacle_grad(base, inner);
    const Vector gout = ofl::obstacle_grad(lo, outer) - ofl::obstacle_grad(base, outer);
    REQUIRE((gin - gout).cwiseAbs().maxCoeff() < 1e-10);
    const Matrix hin = ofl::obstacle_hess(lo, inner) - ofl::obstacle_hess(base, inner);
    const Matrix hout = ofl::obstacle_hess(lo, outer) - ofl::obstacle_hess(base, outer);
    REQUIRE((hin - hout).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("benchmark problem wiring and validation") {
  const ofl::ControlProblem cp = ofl::make_obstacle_problem(ObstacleParams::benchmark(1.0));
  REQUIRE(cp.state_dim == 2);
  REQUIRE(cp.beta == 0.1);
  REQUIRE(cp.f(point(1.0, 2.0)).norm() == 0.0);
  REQUIRE(cp.Omega.contains(point(5.5, 2.5)));
  REQUIRE_FALSE(cp.omega.contains(point(5.5, 2.5)));
  REQUIRE(cp.in_stable_region(point(4.9, 1.9)));
  REQUIRE_FALSE(cp.in_stable_region(point(5.6, 0.0)));

  ObstacleParams bad = ObstacleParams::benchmark(1.0);
  bad.z[0] = -0.5;  // violates z1 < -sigma
  REQUIRE_THROWS_AS(ofl::make_obstacle_problem(bad), std::invalid_argument);
  REQUIRE_THROWS_AS(ofl::make_obstacle_problem(ObstacleParams::benchmark(1.0), 0.1, ofl::Box({{-6, 6}, {-3, 3}}),
                                               ofl::Box({{-5, 5}, {-2, 2}}), 1.5),
                    std::invalid_argument);  // delta exceeds the omega-to-boundary gap
}
