#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

#include "ofl/basis.hpp"
#include "ofl/core.hpp"
#include "ofl/problem.hpp"
#include "ofl/simulate.hpp"

namespace ofl {

/// Adjoint state p on the trajectory's time grid; p(T) = 0 exactly and
/// grad_y of the cost functional equals -p.
struct AdjointPath {
  Matrix p;  // d x (steps + 1)

  int steps() const { return static_cast<int>(p.cols()) - 1; }
};

/// Backward explicit Euler (on the reversed grid) for the adjoint equation
///   -p' + grad l(y) - Df(y)^T p + (1/beta) hess v(y) B B^T (grad v(y) + p) = 0,
/// terminal condition p(T) = 0, along a non-escaped trajectory.
inline AdjointPath solve_adjoint_continuous(const ControlProblem& problem, const ScalarField& v,
                                            const Trajectory& traj) {
  if (traj.escaped()) throw std::invalid_argument("solve_adjoint_continuous: trajectory escaped");
  const int steps = traj.steps();
  const int d = problem.state_dim;
  const Matrix BBt = problem.B * problem.B.transpose();
  AdjointPath adj;
  adj.p = Matrix::Zero(d, steps + 1);
  Vector p = Vector::Zero(d);
  for (int j = steps - 1; j >= 0; --j) {
    const Vector y = traj.states.col(j + 1);
    const Vector rhs = problem.running_cost_grad(y) - problem.Df(y).transpose() * p +
                       (1.0 / problem.beta) * (v.hess(y) * (BBt * (v.grad(y) + p)));
    p -= traj.dt * rhs;
    if (!p.allFinite()) {
      throw std::runtime_error("solve_adjoint_continuous: non-finite adjoint at step " + std::to_string(j));
    }
    adj.p.col(j) = p;
  }
  return adj;
}

/// Gradient of the discrete cost with respect to the ansatz coefficients by
/// the rectangle-rule evaluation of the adjoint-based derivative formula:
///   grad_i = (1/beta) sum_j dt (grad v(y_j) + p_j)^T B B^T grad phi_i(y_j).
inline Vector grad_cost_continuous(const ControlProblem& problem, const Basis& basis, const Vector& theta,
                                   const Trajectory& traj, const AdjointPath& adj) {
  basis.check_theta(theta);
  const Matrix BBt = problem.B * problem.B.transpose();
  Vector grad = Vector::Zero(basis.size());
  for (int j = 0; j < traj.steps(); ++j) {
    const Vector y = traj.states.col(j);
    const Vector w = (traj.dt / problem.beta) * (BBt * (basis.eval_grad(theta, y) + adj.p.col(j)));
    grad.noalias() += basis.function_grads(y) * w;
  }
  return grad;
}

/// Batched cost and exact discrete-adjoint gradient of the closed-loop cost
/// for a set of initial conditions. The gradient is the derivative of the
/// summed discrete cost (Euler rollout + left-rectangle quadrature); the
/// caller applies averaging weights. Escape is reported, not thrown.
struct BatchGradient {
  Vector costs;     // per-point discrete cost
  Vector grad_sum;  // d(sum of costs)/d(theta)
  bool escaped{false};
  int escape_point{-1};
  int escape_step{-1};
};

inline BatchGradient batch_cost_and_gradient(const ControlProblem& problem, const Basis& basis, const Vector& theta,
                                             const std::vector<Vector>& y0s, double T, double dt, BasisBatch& batch) {
  basis.check_theta(theta);
  BatchGradient out;
  BatchRollout roll = batch_rollout(problem, basis, theta, y0s, T, dt, batch, /*store_history=*/true);
  if (roll.any_escaped) {
    out.escaped = true;
    out.escape_point = roll.first_escape_point;
    out.escape_step = roll.first_escape_step;
    return out;
  }
  const int P = roll.npts;
  const int d = problem.state_dim;
  const int hess_rows = d * (d + 1) / 2;
  const Matrix BBt = problem.B * problem.B.transpose();
  out.costs = roll.costs;
  out.grad_sum = Vector::Zero(basis.size());
  Matrix lambda = Matrix::Zero(d, P);
  Matrix c(d, P);
  Matrix hess(hess_rows, P);
  for (int j = roll.steps - 1; j >= 0; --j) {
    const Matrix& Y = roll.states[static_cast<std::size_t>(j)];
    const Matrix& G = roll.grads[static_cast<std::size_t>(j)];
    batch.load(Y, P, 2);
    batch.field_hessians_packed(theta, hess);
    c.noalias() = (dt / problem.beta) * (BBt * (G - lambda));
    batch.accumulate_grad_dots(c, out.grad_sum);
    for (int p = 0; p < P; ++p) {
      const Vector y = Y.col(p);
      lambda.col(p) += dt * (problem.running_cost_grad(y) + problem.Df(y).transpose() * lambda.col(p)) +
                       unpack_hessian(hess.col(p).head(hess_rows), d) * c.col(p);
    }
  }
  return out;
}

/// Discrete cost and its exact coefficient gradient for a single initial
/// condition. Throws if the rollout escapes.
struct DiscreteGradient {
  double cost{0.0};
  Vector grad;
};

inline DiscreteGradient grad_cost_discrete(const ControlProblem& problem, const Basis& basis, const Vector& theta,
                                           const Vector& y0, double T, double dt) {
  BasisBatch batch(basis, 1);
  const BatchGradient bg = batch_cost_and_gradient(problem, basis, theta, {y0}, T, dt, batch);
  if (bg.escaped) {
    throw std::runtime_error("grad_cost_discrete: rollout escaped the stable region at step " +
                             std::to_string(bg.escape_step));
  }
  return DiscreteGradient{bg.costs[0], bg.grad_sum};
}

}  // namespace ofl
