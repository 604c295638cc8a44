#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "ofl/ofl.hpp"
#include "support.hpp"

using ofl::Basis;
using ofl::Box;
using ofl::ControlProblem;
using ofl::FeedbackLaw;
using ofl::IndexSet;
using ofl::InnerProductOrder;
using ofl::Matrix;
using ofl::ObstacleParams;
using ofl::Trajectory;
using ofl::Vector;

namespace {

constexpr double kBeta = 0.1;
const double kSqrtBeta = std::sqrt(kBeta);

ControlProblem lqr_problem(double delta = 0.5) {
  return ofl::make_obstacle_problem(ObstacleParams::benchmark(0.0), kBeta, Box({{-6.0, 6.0}, {-3.0, 3.0}}),
                                    Box({{-5.0, 5.0}, {-2.0, 2.0}}), delta);
}

FeedbackLaw lqr_feedback() {
  return [](const Vector& y) -> Vector { return -y / kSqrtBeta; };
}

Vector point(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

Basis benchmark_basis(int k, int n) {
  return Basis(InnerProductOrder{k}, IndexSet::full(n, 2), Box({{-6.0, 6.0}, {-3.0, 3.0}}));
}

}  // namespace

TEST_CASE("rollout tracks the closed-form exponential decay to first order") {
  const ControlProblem cp = lqr_problem();
  const double T = 1.0;
  const Vector y0 = point(1.0, 0.0);
  const Trajectory traj = ofl::rollout(cp, lqr_feedback(), y0, T, 1.0 / 400.0);
  REQUIRE_FALSE(traj.escaped());
  REQUIRE(traj.states.cols() == 401);
  const Vector expected = y0 * std::exp(-T / kSqrtBeta);
  const double err = (traj.states.col(400) - expected).norm();
  REQUIRE(err < 10.0 * traj.dt);

  const Trajectory fine = ofl::rollout(cp, lqr_feedback(), y0, T, 1.0 / 800.0);
  const double err_fine = (fine.states.col(800) - expected).norm();
  const double ratio = err / err_fine;
  REQUIRE(ratio > 1.7);
  REQUIRE(ratio < 2.3);
}

TEST_CASE("equilibrium stays put with zero cost") {
  const ControlProblem cp = lqr_problem();
  const FeedbackLaw zero = [](const Vector& y) { return Vector(Vector::Zero(y.size())); };
  const Trajectory traj = ofl::rollout(cp, zero, point(0.0, 0.0), 1.0, 1.0 / 400.0);
  REQUIRE_FALSE(traj.escaped());
  REQUIRE(traj.cost == 0.0);
  REQUIRE(traj.states.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("discrete cost converges at first order in dt") {
  const ControlProblem cp = lqr_problem();
  const Vector y0 = point(2.0, -1.0);
  const double c1 = ofl::rollout(cp, lqr_feedback(), y0, 1.0, 1.0 / 200.0).cost;
  const double c2 = ofl::rollout(cp, lqr_feedback(), y0, 1.0, 1.0 / 400.0).cost;
  const double c3 = ofl::rollout(cp, lqr_feedback(), y0, 1.0, 1.0 / 800.0).cost;
  const double ratio = (c1 - c2) / (c2 - c3);
  REQUIRE(ratio > 1.7);
  REQUIRE(ratio < 2.3);
}

TEST_CASE("stability classification") {
  const ControlProblem cp = lqr_problem();
  REQUIRE(ofl::check_stability(cp, lqr_feedback(), point(4.9, 1.9), 1.0, 1.0 / 400.0).stable);
  REQUIRE(ofl::check_stability(cp, lqr_feedback(), point(0.0, 0.0), 1.0, 1.0 / 400.0).stable);

  const FeedbackLaw expanding = [](const Vector& y) -> Vector { return y / kSqrtBeta; };
  const auto res = ofl::check_stability(cp, expanding, point(4.9, 1.9), 1.0, 1.0 / 400.0);
  REQUIRE_FALSE(res.stable);
  REQUIRE(res.escape_step.has_value());

  // starting outside the stable region counts as an immediate escape
  const auto outside = ofl::check_stability(cp, lqr_feedback(), point(5.6, 0.0), 1.0, 1.0 / 400.0);
  REQUIRE_FALSE(outside.stable);
  REQUIRE(outside.escape_step.value() == 0);
}

TEST_CASE("rollout is deterministic") {
  const ControlProblem cp = lqr_problem();
  const Trajectory a = ofl::rollout(cp, lqr_feedback(), point(3.3, 1.1), 1.0, 1.0 / 400.0);
  const Trajectory b = ofl::rollout(cp, lqr_feedback(), point(3.3, 1.1), 1.0, 1.0 / 400.0);
  REQUIRE(a.cost == b.cost);
  REQUIRE((a.states - b.states).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.controls - b.controls).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cost over [0,T] splits at the midpoint state") {
  const ControlProblem cp = lqr_problem();
  const Vector y0 = point(-3.0, 1.5);
  const double dt = 1.0 / 400.0;
  const Trajectory full = ofl::rollout(cp, lqr_feedback(), y0, 1.0, dt);
  const Trajectory first = ofl::rollout(cp, lqr_feedback(), y0, 0.5, dt);
  const Vector mid = first.states.col(first.steps());
  REQUIRE((mid - full.states.col(200)).cwiseAbs().maxCoeff() == 0.0);
  const Trajectory second = ofl::rollout(cp, lqr_feedback(), mid, 0.5, dt);
  REQUIRE(full.cost == Catch::Approx(first.cost + second.cost).epsilon(1e-12));
}

TEST_CASE("escape is monotone in the margin") {
  const FeedbackLaw wander = [](const Vector& y) -> Vector {
    Vector u(2);
    u << 0.4 - 0.2 * y[0], -0.3 * y[1];
    return u;
  };
  for (double y0x : {1.0, 4.0, 4.9}) {
    const bool stable_wide = ofl::check_stability(lqr_problem(0.5), wander, point(y0x, 1.2), 1.0, 1.0 / 400.0).stable;
    const bool stable_narrow =
        ofl::check_stability(lqr_problem(0.25), wander, point(y0x, 1.2), 1.0, 1.0 / 400.0).stable;
    if (stable_wide) REQUIRE(stable_narrow);
  }
}

TEST_CASE("stability margin bound: identical fields and vanishing horizons") {
  const ControlProblem cp = lqr_problem();
  const Basis basis = benchmark_basis(1, 4);
  const Vector theta = test_support::lqr_coefficients(basis, kBeta);
  const ofl::ScalarField g = ofl::make_field(basis, theta);
  const auto same = ofl::stability_margin(cp, g, g, 1.0, cp.delta, 100);
  REQUIRE(same.bound_value == 0.0);
  REQUIRE(same.satisfied);

  Vector theta2 = theta;
  theta2[3] += 0.2;
  const ofl::ScalarField g2 = ofl::make_field(basis, theta2);
  const auto tiny_T = ofl::stability_margin(cp, g2, g, 1e-9, cp.delta, 100);
  REQUIRE(tiny_T.bound_value < 1e-6);
  REQUIRE(tiny_T.satisfied);
}

TEST_CASE("stability margin bound scales linearly in the perturbation size") {
  const ControlProblem cp = lqr_problem();
  const Basis basis = benchmark_basis(1, 4);
  const Vector base = test_support::lqr_coefficients(basis, kBeta);
  std::mt19937 rng = test_support::seeded_rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector direction(basis.size());
  for (int i = 0; i < direction.size(); ++i) direction[i] = unit(rng);

  const ofl::ScalarField g2 = ofl::make_field(basis, base);
  const auto at_eps = ofl::stability_margin(cp, ofl::make_field(basis, base + 1e-3 * direction), g2, 1.0, cp.delta, 100);
  const auto at_2eps =
      ofl::stability_margin(cp, ofl::make_field(basis, base + 2e-3 * direction), g2, 1.0, cp.delta, 100);
  REQUIRE(at_2eps.bound_value == Catch::Approx(2.0 * at_eps.bound_value).epsilon(1e-9));
}

TEST_CASE("state deviation bound holds on random stable field pairs") {
  const ControlProblem cp = lqr_problem();
  const Basis basis = benchmark_basis(1, 4);
  const Vector base = test_support::lqr_coefficients(basis, kBeta);
  const ofl::ScalarField gbase = ofl::make_field(basis, base);

  // identical fields first: zero deviation against a zero bound
  const auto same = ofl::lipschitz_deviation_check(cp, gbase, gbase, point(2.0, 1.0), 1.0, 1.0 / 400.0);
  REQUIRE(same.lhs == 0.0);
  REQUIRE(same.rhs == 0.0);

  std::mt19937 rng = test_support::seeded_rng(31);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Vector p1(basis.size()), p2(basis.size());
    for (int i = 0; i < basis.size(); ++i) {
      p1[i] = 0.02 * unit(rng);
      p2[i] = 0.02 * unit(rng);
    }
    const Vector y0 = point(3.0 * unit(rng), 1.2 * unit(rng));
    const ofl::ScalarField g1 = ofl::make_field(basis, base + p1);
    const ofl::ScalarField g2 = ofl::make_field(basis, base + p2);
    if (!ofl::check_stability(cp, ofl::make_feedback(g1, cp), y0, 1.0, 1.0 / 400.0).stable) continue;
    if (!ofl::check_stability(cp, ofl::make_feedback(g2, cp), y0, 1.0, 1.0 / 400.0).stable) continue;
    const auto check = ofl::lipschitz_deviation_check(cp, g1, g2, y0, 1.0, 1.0 / 400.0);
    REQUIRE(check.lhs <= check.rhs * 1.05);
    ++checked;
  }
  REQUIRE(checked >= 8);

  // the bound grows monotonically with the horizon
  Vector p(basis.size());
  for (int i = 0; i < basis.size(); ++i) p[i] = 0.01 * unit(rng);
  const ofl::ScalarField g1 = ofl::make_field(basis, base + p);
  const auto short_T = ofl::lipschitz_deviation_check(cp, g1, gbase, point(1.0, 0.5), 0.5, 1.0 / 400.0);
  const auto long_T = ofl::lipschitz_deviation_check(cp, g1, gbase, point(1.0, 0.5), 1.0, 1.0 / 400.0);
  REQUIRE(long_T.rhs > short_T.rhs);
}

TEST_CASE("deviation check refuses escaped rollouts") {
  const ControlProblem cp = lqr_problem();
  const Basis basis = benchmark_basis(1, 2);
  // sign-flipped quadratic field drives trajectories outward
  const Vector bad = -test_support::lqr_coefficients(basis, kBeta);
  const ofl::ScalarField gbad = ofl::make_field(basis, bad);
  const ofl::ScalarField good = ofl::make_field(basis, test_support::lqr_coefficients(basis, kBeta));
  REQUIRE_THROWS_AS(ofl::lipschitz_deviation_check(cp, gbad, good, point(4.9, 1.9), 1.0, 1.0 / 400.0),
                    std::runtime_error);
}

TEST_CASE("trajectory CSV schema") {
  const ControlProblem cp = lqr_problem();
  const Trajectory traj = ofl::rollout(cp, lqr_feedback(), point(1.0, 1.0), 0.05, 1.0 / 400.0);
  std::stringstream ss;
  ofl::write_trajectory_csv(ss, traj);
  std::string line;
  std::getline(ss, line);
  REQUIRE(line == "t,y1,y2,u1,u2,running_cost");
  int rows = 0;
  std::string last;
  while (std::getline(ss, line)) {
    last = line;
    ++rows;
  }
  REQUIRE(rows == traj.states.cols());
  // terminal row carries empty control fields and the total cost
  REQUIRE(last.find(",,,") != std::string::npos);
  REQUIRE(last.substr(last.rfind(',') + 1) == ofl::format_double(traj.cost, "%.17g"));
}

TEST_CASE("batched rollout matches per-point rollouts") {
  const ControlProblem cp = lqr_problem();
  const Basis basis = benchmark_basis(1, 6);
  std::mt19937 rng = test_support::seeded_rng(13);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector theta = test_support::lqr_coefficients(basis, kBeta);
  for (int i = 0; i < theta.size(); ++i) theta[i] += 0.01 * unit(rng);
  std::vector<Vector> points;
  for (int trial = 0; trial < 9; ++trial) points.push_back(point(4.0 * unit(rng), 1.7 * unit(rng)));

  ofl::BasisBatch batch(basis, static_cast<int>(points.size()));
  const ofl::BatchRollout roll = ofl::batch_rollout(cp, basis, theta, points, 1.0, 1.0 / 400.0, batch, true);
  REQUIRE_FALSE(roll.any_escaped);
  const FeedbackLaw fb = ofl::make_feedback(basis, theta, cp);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Trajectory traj = ofl::rollout(cp, fb, points[i], 1.0, 1.0 / 400.0);
    REQUIRE(roll.costs[static_cast<int>(i)] == Catch::Approx(traj.cost).epsilon(1e-12));
    REQUIRE((roll.states.back().col(static_cast<int>(i)) - traj.states.col(400)).cwiseAbs().maxCoeff() < 1e-10);
  }

  // eval rollouts agree as well and tolerate per-point escapes
  std::vector<Vector> with_bad = points;
  with_bad.push_back(point(5.6, 0.0));  // outside the stable region from the start
  const ofl::EvalRollouts eval = ofl::batch_eval_rollouts(cp, basis, theta, with_bad, 1.0, 1.0 / 400.0, true);
  for (std::size_t i = 0; i < points.size(); ++i) {
    REQUIRE_FALSE(eval.escaped[i]);
    REQUIRE(eval.costs[static_cast<int>(i)] == Catch::Approx(roll.costs[static_cast<int>(i)]).epsilon(1e-12));
  }
  REQUIRE(eval.escaped.back() == 1);
  REQUIRE(eval.costs[static_cast<int>(points.size())] == 0.0);
}
