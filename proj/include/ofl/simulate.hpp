#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "ofl/basis.hpp"
#include "ofl/core.hpp"
#include "ofl/problem.hpp"

namespace ofl {

using FeedbackLaw = std::function<Vector(const Vector&)>;

/// Twice-differentiable scalar field on Omega (value, gradient, Hessian).
struct ScalarField {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;
};

inline ScalarField make_field(const Basis& basis, Vector theta) {
  basis.check_theta(theta);
  ScalarField f;
  f.value = [&basis, theta](const Vector& y) { return basis.eval(theta, y); };
  f.grad = [&basis, theta](const Vector& y) { return basis.eval_grad(theta, y); };
  f.hess = [&basis, theta](const Vector& y) { return basis.eval_hess(theta, y); };
  return f;
}

/// Feedback law u(y) = -(1/beta) B^T grad v(y).
inline FeedbackLaw make_feedback(const ScalarField& field, const ControlProblem& problem) {
  const Matrix Bt = problem.B.transpose();
  const double inv_beta = 1.0 / problem.beta;
  auto grad = field.grad;
  return [Bt, inv_beta, grad](const Vector& y) -> Vector { return -inv_beta * (Bt * grad(y)); };
}

inline FeedbackLaw make_feedback(const Basis& basis, const Vector& theta, const ControlProblem& problem) {
  return make_feedback(make_field(basis, theta), problem);
}

/// Discrete closed-loop path on a uniform time grid.
struct Trajectory {
  double dt{0.0};
  Matrix states;           // d x (recorded steps + 1)
  Matrix controls;         // m x recorded steps
  Vector cumulative_cost;  // partial left-rectangle sums, size = states cols
  double cost{0.0};
  std::optional<int> escape_step;

  bool escaped() const { return escape_step.has_value(); }
  int steps() const { return static_cast<int>(controls.cols()); }
  double time(int j) const { return j * dt; }
};

inline int step_count(double T, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_count: dt must be positive");
  const double ratio = T / dt;
  const int steps = static_cast<int>(std::lround(ratio));
  if (steps < 1 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio)) {
    throw std::invalid_argument("step_count: T must be a positive multiple of dt");
  }
  return steps;
}

/// Explicit Euler rollout of y' = f(y) + B u(y) with left-rectangle cost
/// accumulation. Halts with the escape flag at the first state outside the
/// delta-interior of Omega (non-finite states count as escape).
inline Trajectory rollout(const ControlProblem& problem, const FeedbackLaw& feedback, const Vector& y0, double T,
                          double dt) {
  const int steps = step_count(T, dt);
  const int d = problem.state_dim;
  const int m = problem.control_dim;
  Trajectory traj;
  traj.dt = dt;
  traj.states.resize(d, steps + 1);
  traj.controls.resize(m, steps);
  traj.cumulative_cost.resize(steps + 1);
  traj.cumulative_cost[0] = 0.0;
  traj.states.col(0) = y0;
  if (!y0.allFinite() || !problem.in_stable_region(y0)) {
    traj.escape_step = 0;
    traj.states.conservativeResize(d, 1);
    traj.controls.conservativeResize(m, 0);
    traj.cumulative_cost.conservativeResize(1);
    return traj;
  }
  Vector y = y0;
  double cost = 0.0;
  for (int j = 0; j < steps; ++j) {
    const Vector u = feedback(y);
    cost += dt * (problem.running_cost(y) + 0.5 * problem.beta * u.squaredNorm());
    traj.controls.col(j) = u;
    y += dt * (problem.f(y) + problem.B * u);
    traj.states.col(j + 1) = y;
    traj.cumulative_cost[j + 1] = cost;
    if (!y.allFinite() || !problem.in_stable_region(y)) {
      traj.escape_step = j + 1;
      traj.states.conservativeResize(d, j + 2);
      traj.controls.conservativeResize(m, j + 1);
      traj.cumulative_cost.conservativeResize(j + 2);
      break;
    }
  }
  traj.cost = cost;
  return traj;
}

/// Open-loop rollout under a fixed control sequence (m x N). No escape
/// monitoring: the open-loop problem is posed on all of R^d.
inline Trajectory rollout_controls(const ControlProblem& problem, const Vector& y0,
                                   const Eigen::Ref<const Matrix>& controls, double dt) {
  const int steps = static_cast<int>(controls.cols());
  Trajectory traj;
  traj.dt = dt;
  traj.states.resize(problem.state_dim, steps + 1);
  traj.controls = controls;
  traj.cumulative_cost.resize(steps + 1);
  traj.cumulative_cost[0] = 0.0;
  traj.states.col(0) = y0;
  Vector y = y0;
  double cost = 0.0;
  for (int j = 0; j < steps; ++j) {
    const Vector u = controls.col(j);
    cost += dt * (problem.running_cost(y) + 0.5 * problem.beta * u.squaredNorm());
    y += dt * (problem.f(y) + problem.B * u);
    traj.states.col(j + 1) = y;
    traj.cumulative_cost[j + 1] = cost;
  }
  traj.cost = cost;
  return traj;
}

struct StabilityResult {
  bool stable{false};
  std::optional<int> escape_step;
};

inline StabilityResult check_stability(const ControlProblem& problem, const FeedbackLaw& feedback, const Vector& y0,
                                       double T, double dt) {
  const Trajectory traj = rollout(problem, feedback, y0, T, dt);
  return StabilityResult{!traj.escaped(), traj.escape_step};
}

namespace detail {

inline double sup_feedback_gap(const ControlProblem& problem, const ScalarField& g1, const ScalarField& g2,
                               const Box& region, int pts_per_axis) {
  const Matrix Bt = problem.B.transpose();
  double sup = 0.0;
  for (const Vector& y : sample_grid(region, pts_per_axis)) {
    sup = std::max(sup, (Bt * (g1.grad(y) - g2.grad(y))).norm() / problem.beta);
  }
  return sup;
}

inline double sup_hess_norm(const ScalarField& g, const Box& region, int pts_per_axis) {
  double sup = 0.0;
  for (const Vector& y : sample_grid(region, pts_per_axis)) sup = std::max(sup, spectral_norm(g.hess(y)));
  return sup;
}

inline double sup_jacobian_norm(const ControlProblem& problem, const Box& region, int pts_per_axis) {
  double sup = 0.0;
  for (const Vector& y : sample_grid(region, pts_per_axis)) sup = std::max(sup, spectral_norm(problem.Df(y)));
  return sup;
}

inline double growth_factor(double a, double t) {
  // (e^{ta} - 1)/a, continuous at a = 0.
  if (a == 0.0) return t;
  return std::expm1(t * a) / a;
}

}  // namespace detail

struct StabilityMargin {
  double bound_value{0.0};
  bool satisfied{false};
  double amplification{0.0};   // a = |Df| + (|B|^2/beta) |hess g2|, sup over the sampled region
  double feedback_gap{0.0};    // sup |u_{g1} - u_{g2}|
};

/// Perturbation-stability bound: checks
///   |B| * sup|u_{g1}-u_{g2}| * (e^{Ta}-1)/a <= delta/2
/// with norms sampled over the (delta/4)-interior of Omega.
inline StabilityMargin stability_margin(const ControlProblem& problem, const ScalarField& g1, const ScalarField& g2,
                                        double T, double delta, int pts_per_axis = 200) {
  if (pts_per_axis < 100) throw std::invalid_argument("stability_margin: need >= 100 sample points per axis");
  const Box region = problem.Omega.shrunk(delta / 4.0);
  StabilityMargin out;
  const double normB = spectral_norm(problem.B);
  out.feedback_gap = detail::sup_feedback_gap(problem, g1, g2, region, pts_per_axis);
  out.amplification = detail::sup_jacobian_norm(problem, region, pts_per_axis) +
                      normB * normB / problem.beta * detail::sup_hess_norm(g2, region, pts_per_axis);
  out.bound_value = normB * out.feedback_gap * detail::growth_factor(out.amplification, T);
  out.satisfied = out.bound_value <= delta / 2.0;
  return out;
}

struct DeviationCheck {
  double lhs{0.0};  // max over grid times of |y1(t) - y2(t)|
  double rhs{0.0};  // analytic bound at t = T
};

/// Closed-loop state-deviation bound check:
///   |y(t;y0,u_{g1}) - y(t;y0,u_{g2})| <= |B| sup|u_{g1}-u_{g2}| (e^{ta}-1)/a,
/// norms sampled over the delta-interior of Omega. Both feedbacks must be
/// stable from y0; otherwise this throws.
inline DeviationCheck lipschitz_deviation_check(const ControlProblem& problem, const ScalarField& g1,
                                                const ScalarField& g2, const Vector& y0, double T, double dt,
                                                int pts_per_axis = 100) {
  const Trajectory t1 = rollout(problem, make_feedback(g1, problem), y0, T, dt);
  const Trajectory t2 = rollout(problem, make_feedback(g2, problem), y0, T, dt);
  if (t1.escaped() || t2.escaped()) {
    throw std::runtime_error("lipschitz_deviation_check: a rollout escaped the stable region");
  }
  const Box region = problem.Omega.shrunk(problem.delta);
  const double normB = spectral_norm(problem.B);
  const double gap = detail::sup_feedback_gap(problem, g1, g2, region, pts_per_axis);
  const double a = detail::sup_jacobian_norm(problem, region, pts_per_axis) +
                   normB * normB / problem.beta * detail::sup_hess_norm(g2, region, pts_per_axis);
  DeviationCheck out;
  for (int j = 0; j < t1.states.cols(); ++j) {
    out.lhs = std::max(out.lhs, (t1.states.col(j) - t2.states.col(j)).norm());
  }
  out.rhs = normB * gap * detail::growth_factor(a, T);
  return out;
}

/// CSV export: header t,y1,...,yd,u1,...,um,running_cost. The terminal row
/// has empty control fields.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const int d = static_cast<int>(traj.states.rows());
  const int m = static_cast<int>(traj.controls.rows());
  os << "t";
  for (int i = 1; i <= d; ++i) os << ",y" << i;
  for (int i = 1; i <= m; ++i) os << ",u" << i;
  os << ",running_cost\n";
  for (int j = 0; j < traj.states.cols(); ++j) {
    os << format_double(traj.time(j), "%.17g");
    for (int i = 0; i < d; ++i) os << "," << format_double(traj.states(i, j), "%.17g");
    for (int i = 0; i < m; ++i) {
      os << ",";
      if (j < traj.controls.cols()) os << format_double(traj.controls(i, j), "%.17g");
    }
    os << "," << format_double(traj.cumulative_cost[j], "%.17g") << "\n";
  }
}

/// Lockstep batched closed-loop rollout for a set of initial conditions,
/// using vectorized basis evaluation for the feedback. Stores per-step states
/// and field gradients so an adjoint sweep can follow. A batch member that
/// leaves the stable region marks the whole batch as escaped (training treats
/// any escape as an infeasible step).
struct BatchRollout {
  int steps{0};
  int npts{0};
  double dt{0.0};
  std::vector<Matrix> states;  // per step j=0..steps: d x npts
  std::vector<Matrix> grads;   // per step j=0..steps-1: grad v at states[j], d x npts
  Vector costs;                // per-point accumulated discrete cost
  bool any_escaped{false};
  int first_escape_point{-1};
  int first_escape_step{-1};
};

inline BatchRollout batch_rollout(const ControlProblem& problem, const Basis& basis, const Vector& theta,
                                  const std::vector<Vector>& y0s, double T, double dt, BasisBatch& batch,
                                  bool store_history) {
  const int steps = step_count(T, dt);
  const int P = static_cast<int>(y0s.size());
  const int d = problem.state_dim;
  BatchRollout out;
  out.steps = steps;
  out.npts = P;
  out.dt = dt;
  out.costs = Vector::Zero(P);
  Matrix Y(d, P);
  for (int p = 0; p < P; ++p) Y.col(p) = y0s[static_cast<std::size_t>(p)];
  for (int p = 0; p < P; ++p) {
    if (!problem.in_stable_region(Y.col(p))) {
      out.any_escaped = true;
      out.first_escape_point = p;
      out.first_escape_step = 0;
      return out;
    }
  }
  if (store_history) {
    out.states.reserve(static_cast<std::size_t>(steps + 1));
    out.grads.reserve(static_cast<std::size_t>(steps));
  }
  const Matrix BBt_over_beta = problem.B * problem.B.transpose() / problem.beta;
  Matrix G(d, P);
  const double half_beta = 0.5 * problem.beta;
  const double inv_beta2 = 1.0 / (problem.beta * problem.beta);
  for (int j = 0; j < steps; ++j) {
    batch.load(Y, P, 1);
    batch.field_grads(theta, G);
    if (store_history) {
      out.states.push_back(Y);
      out.grads.push_back(G);
    }
    // u = -(1/beta) B^T g; cost step = dt (l(y) + (beta/2)|u|^2)
    for (int p = 0; p < P; ++p) {
      const Vector u_scaled = problem.B.transpose() * G.col(p);  // = -beta u
      out.costs[p] += dt * (problem.running_cost(Y.col(p)) + half_beta * inv_beta2 * u_scaled.squaredNorm());
    }
    for (int p = 0; p < P; ++p) {
      Y.col(p) += dt * (problem.f(Y.col(p)) - BBt_over_beta * G.col(p));
    }
    for (int p = 0; p < P; ++p) {
      if (!Y.col(p).allFinite() || !problem.in_stable_region(Y.col(p))) {
        out.any_escaped = true;
        out.first_escape_point = p;
        out.first_escape_step = j + 1;
        return out;
      }
    }
  }
  if (store_history) out.states.push_back(Y);
  return out;
}

/// Per-point evaluation rollouts: unlike the training batch, an escape only
/// freezes the affected point (its cost stays at the value accumulated up to
/// the escape step) and the rest of the batch continues.
struct EvalRollouts {
  Vector costs;
  std::vector<char> escaped;
  std::vector<Matrix> controls;  // per point, m x (steps completed)
};

inline EvalRollouts batch_eval_rollouts(const ControlProblem& problem, const Basis& basis, const Vector& theta,
                                        const std::vector<Vector>& y0s, double T, double dt, bool keep_controls) {
  const int steps = step_count(T, dt);
  const int P = static_cast<int>(y0s.size());
  const int d = problem.state_dim;
  const int m = problem.control_dim;
  BasisBatch batch(basis, P);
  EvalRollouts out;
  out.costs = Vector::Zero(P);
  out.escaped.assign(static_cast<std::size_t>(P), 0);
  std::vector<int> stopped_at(static_cast<std::size_t>(P), steps);
  Matrix Y(d, P);
  Vector park(d);
  for (int i = 0; i < d; ++i) park[i] = problem.Omega[i].center();
  for (int p = 0; p < P; ++p) {
    if (problem.in_stable_region(y0s[static_cast<std::size_t>(p)])) {
      Y.col(p) = y0s[static_cast<std::size_t>(p)];
    } else {
      out.escaped[static_cast<std::size_t>(p)] = 1;
      stopped_at[static_cast<std::size_t>(p)] = 0;
      Y.col(p) = park;
    }
  }
  if (keep_controls) out.controls.assign(static_cast<std::size_t>(P), Matrix(m, steps));
  const Matrix BBt_over_beta = problem.B * problem.B.transpose() / problem.beta;
  Matrix G(d, P);
  const double half_over_beta = 0.5 / problem.beta;
  for (int j = 0; j < steps; ++j) {
    batch.load(Y, P, 1);
    batch.field_grads(theta, G);
    for (int p = 0; p < P; ++p) {
      if (out.escaped[static_cast<std::size_t>(p)]) continue;
      const Vector u_scaled = problem.B.transpose() * G.col(p);  // = -beta u
      if (keep_controls) out.controls[static_cast<std::size_t>(p)].col(j) = -u_scaled / problem.beta;
      out.costs[p] += dt * (problem.running_cost(Y.col(p)) + half_over_beta * u_scaled.squaredNorm());
      Y.col(p) += dt * (problem.f(Y.col(p)) - BBt_over_beta * G.col(p));
      if (!Y.col(p).allFinite() || !problem.in_stable_region(Y.col(p))) {
        out.escaped[static_cast<std::size_t>(p)] = 1;
        stopped_at[static_cast<std::size_t>(p)] = j + 1;
        Y.col(p) = park;
      }
    }
  }
  if (keep_controls) {
    for (int p = 0; p < P; ++p) {
      if (stopped_at[static_cast<std::size_t>(p)] < steps) {
        out.controls[static_cast<std::size_t>(p)].conservativeResize(m, stopped_at[static_cast<std::size_t>(p)]);
      }
    }
  }
  return out;
}

}  // namespace ofl
