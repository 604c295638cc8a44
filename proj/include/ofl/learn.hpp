#pragma once

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofl/adjoint.hpp"
#include "ofl/basis.hpp"
#include "ofl/core.hpp"
#include "ofl/optimize.hpp"
#include "ofl/problem.hpp"
#include "ofl/reference.hpp"
#include "ofl/simulate.hpp"

namespace ofl {

/// Learning-problem setting: ansatz, elastic-net penalty weight, and horizon.
/// The penalty is P(theta) = 1/2 (1/2 |theta|_2^2 + |theta|_1); its l2 half is
/// treated as smooth, the l1 half goes through the prox map.
struct Setting {
  const Basis* basis{nullptr};
  double alpha{0.0};
  double T{1.0};

  void validate() const {
    if (!basis) throw std::invalid_argument("Setting: missing basis");
    if (alpha < 0.0) throw std::invalid_argument("Setting: alpha must be >= 0");
    if (!(T > 0.0)) throw std::invalid_argument("Setting: T must be > 0");
  }
};

inline double penalty(const Vector& theta) { return 0.5 * (0.5 * theta.squaredNorm() + theta.lpNorm<1>()); }
inline double penalty_smooth(const Vector& theta) { return 0.25 * theta.squaredNorm(); }

/// One proximal step: soft threshold of the gradient step, with the l1
/// threshold step*alpha/2 implied by the elastic-net split.
inline Vector prox_step(const Vector& theta, const Vector& gradient, double step, double alpha) {
  if (!(step > 0.0)) throw std::invalid_argument("prox_step: step must be positive");
  return soft_threshold(theta - step * gradient, step * alpha / 2.0);
}

enum class Method { afls, traj_regression, domain_regression };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::afls: return "afls";
    case Method::traj_regression: return "traj_regression";
    case Method::domain_regression: return "domain_regression";
  }
  throw std::logic_error("unknown method");
}

inline Method method_from_string(const std::string& s) {
  if (s == "afls") return Method::afls;
  if (s == "traj_regression") return Method::traj_regression;
  if (s == "domain_regression") return Method::domain_regression;
  throw std::invalid_argument("unknown method: " + s);
}

struct TrainConfig {
  Method method{Method::afls};
  int bb_window{3};
  double tol{1e-6};
  double kappa{1e-3};
  double xi{0.5};
  int max_iters{2000};
  double dt{1.0 / 400.0};
  std::vector<Vector> training_points;  // AFLS initial conditions
  std::optional<Vector> warm_start;
  bool verify_gradient{false};  // finite-difference spot check at the start point
};

struct TrainRun {
  Vector theta_star;
  std::vector<AcceptedStep> objective_trace;
  std::vector<double> residual_trace;
  int iters{0};
  bool converged{false};
  int escape_rejections{0};
  double wall_seconds{0.0};
  double final_objective{0.0};  // smooth part + alpha/2 |theta|_1
};

/// Averaged closed-loop cost objective: mean discrete cost over the training
/// points plus the smooth penalty half. Any escaped rollout yields +inf.
inline double afls_objective_grad(const Setting& setting, const ControlProblem& problem, const Vector& theta,
                                  const std::vector<Vector>& training_points, double dt, BasisBatch& batch,
                                  Vector* grad) {
  setting.validate();
  const Basis& basis = *setting.basis;
  const double alpha = setting.alpha;
  if (training_points.empty()) {
    if (grad) *grad = 0.5 * alpha * theta;
    return alpha * penalty_smooth(theta);
  }
  const double inv_n = 1.0 / static_cast<double>(training_points.size());
  if (grad) {
    const BatchGradient bg = batch_cost_and_gradient(problem, basis, theta, training_points, setting.T, dt, batch);
    if (bg.escaped) return std::numeric_limits<double>::infinity();
    *grad = inv_n * bg.grad_sum + 0.5 * alpha * theta;
    return inv_n * bg.costs.sum() + alpha * penalty_smooth(theta);
  }
  const BatchRollout roll = batch_rollout(problem, basis, theta, training_points, setting.T, dt, batch, false);
  if (roll.any_escaped) return std::numeric_limits<double>::infinity();
  return inv_n * roll.costs.sum() + alpha * penalty_smooth(theta);
}

/// Convenience overload matching the operation signature (J, grad J).
inline std::pair<double, Vector> afls_objective_grad(const Setting& setting, const ControlProblem& problem,
                                                     const Vector& theta, const std::vector<Vector>& training_points,
                                                     double dt = 1.0 / 400.0) {
  BasisBatch batch(*setting.basis, static_cast<int>(std::max<std::size_t>(training_points.size(), 1)));
  Vector grad;
  const double j = afls_objective_grad(setting, problem, theta, training_points, dt, batch, &grad);
  return {j, std::move(grad)};
}

/// Quadratic data-fit model J_data(theta) = 1/2 theta^T H theta + b^T theta + c.
struct QuadraticModel {
  Matrix H;
  Vector b;
  double c{0.0};
  int samples{0};
  int points_used{0};
  int points_skipped{0};
};

namespace detail {

/// Accumulate w * |B^T grad v(theta)(x_s) - t_s|^2 terms into the model, where
/// the sample coordinates are the columns of X and targets the columns of T.
inline void accumulate_samples(QuadraticModel& model, const Basis& basis, const Matrix& B,
                               const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& targets,
                               double weight, BasisBatch& batch) {
  const int P = static_cast<int>(X.cols());
  const int d = basis.dim();
  const int m = static_cast<int>(B.cols());
  const int N = basis.size();
  batch.load(X, P, 1);
  // Per-dimension partial matrices: column a holds d(phi_a)/dy_i at every point.
  std::vector<Matrix> partial(static_cast<std::size_t>(d), Matrix(P, N));
  Matrix Gp(N, d);
  for (int p = 0; p < P; ++p) {
    batch.function_grads_at(p, Gp);
    for (int i = 0; i < d; ++i) partial[static_cast<std::size_t>(i)].row(p) = Gp.col(i).transpose();
  }
  Matrix Q(P, N);
  for (int c = 0; c < m; ++c) {
    Q.setZero();
    for (int i = 0; i < d; ++i) Q += B(i, c) * partial[static_cast<std::size_t>(i)];
    model.H.selfadjointView<Eigen::Lower>().rankUpdate(Q.transpose(), 2.0 * weight);
    model.b.noalias() -= 2.0 * weight * (Q.transpose() * targets.row(c).transpose());
    model.c += weight * targets.row(c).squaredNorm();
  }
  model.samples += P;
}

inline void symmetrize_lower(Matrix& H) {
  H.triangularView<Eigen::StrictlyUpper>() = H.transpose().triangularView<Eigen::StrictlyUpper>();
}

}  // namespace detail

/// Data model for the along-trajectory regression: samples are the reference
/// states y*_j over [0,T], targets B^T grad V(y*_j) = -beta u*_j, weight
/// dt/(2 beta Npts). Non-converged dataset points are skipped with a warning.
inline QuadraticModel build_traj_regression_model(const Setting& setting, const ControlProblem& problem,
                                                  const Dataset& dataset, std::ostream* warnings = nullptr,
                                                  int chunk = 512) {
  setting.validate();
  const Basis& basis = *setting.basis;
  const int steps = step_count(setting.T, dataset.dt);
  QuadraticModel model;
  model.H = Matrix::Zero(basis.size(), basis.size());
  model.b = Vector::Zero(basis.size());
  BasisBatch batch(basis, chunk);
  std::vector<const ReferenceSolution*> used;
  for (const auto& p : dataset.points) {
    if (!p.converged) {
      ++model.points_skipped;
      if (warnings) (*warnings) << "warning: skipping non-converged reference point\n";
      continue;
    }
    if (static_cast<int>(p.controls.cols()) < steps) {
      throw std::invalid_argument("build_traj_regression_model: cached trajectory shorter than the horizon");
    }
    used.push_back(&p);
  }
  model.points_used = static_cast<int>(used.size());
  if (used.empty()) return model;
  const double weight = dataset.dt / (2.0 * problem.beta * static_cast<double>(used.size()));
  Matrix X(basis.dim(), chunk), T(problem.control_dim, chunk);
  int fill = 0;
  for (const ReferenceSolution* p : used) {
    for (int j = 0; j < steps; ++j) {
      X.col(fill) = p->states.col(j);
      T.col(fill) = -problem.beta * p->controls.col(j);
      if (++fill == chunk) {
        detail::accumulate_samples(model, basis, problem.B, X, T, weight, batch);
        fill = 0;
      }
    }
  }
  if (fill > 0) detail::accumulate_samples(model, basis, problem.B, X.leftCols(fill), T.leftCols(fill), weight, batch);
  detail::symmetrize_lower(model.H);
  return model;
}

/// Data model for the initial-condition regression: one sample per grid point,
/// target B^T grad V(y0) = -beta u*(0), weight 1/(2 beta Npts).
inline QuadraticModel build_domain_regression_model(const Setting& setting, const ControlProblem& problem,
                                                    const Dataset& dataset, std::ostream* warnings = nullptr,
                                                    int chunk = 512) {
  setting.validate();
  const Basis& basis = *setting.basis;
  QuadraticModel model;
  model.H = Matrix::Zero(basis.size(), basis.size());
  model.b = Vector::Zero(basis.size());
  BasisBatch batch(basis, chunk);
  std::vector<const ReferenceSolution*> used;
  for (const auto& p : dataset.points) {
    if (!p.converged) {
      ++model.points_skipped;
      if (warnings) (*warnings) << "warning: skipping non-converged reference point\n";
      continue;
    }
    used.push_back(&p);
  }
  model.points_used = static_cast<int>(used.size());
  if (used.empty()) return model;
  const double weight = 1.0 / (2.0 * problem.beta * static_cast<double>(used.size()));
  Matrix X(basis.dim(), chunk), T(problem.control_dim, chunk);
  int fill = 0;
  for (const ReferenceSolution* p : used) {
    X.col(fill) = p->y0;
    T.col(fill) = gradV_target(*p, problem);
    if (++fill == chunk) {
      detail::accumulate_samples(model, basis, problem.B, X, T, weight, batch);
      fill = 0;
    }
  }
  if (fill > 0) detail::accumulate_samples(model, basis, problem.B, X.leftCols(fill), T.leftCols(fill), weight, batch);
  detail::symmetrize_lower(model.H);
  return model;
}

/// Smooth objective and gradient of a regression problem at theta.
inline double quadratic_objective_grad(const QuadraticModel& model, double alpha, const Vector& theta, Vector* grad) {
  if (grad) *grad = model.H * theta + model.b + 0.5 * alpha * theta;
  return 0.5 * theta.dot(model.H * theta) + model.b.dot(theta) + model.c + alpha * penalty_smooth(theta);
}

inline std::pair<double, Vector> traj_regression_objective_grad(const Setting& setting, const ControlProblem& problem,
                                                                const Vector& theta, const Dataset& dataset) {
  const QuadraticModel model = build_traj_regression_model(setting, problem, dataset);
  Vector grad;
  const double j = quadratic_objective_grad(model, setting.alpha, theta, &grad);
  return {j, std::move(grad)};
}

inline std::pair<double, Vector> domain_regression_objective_grad(const Setting& setting,
                                                                  const ControlProblem& problem, const Vector& theta,
                                                                  const Dataset& dataset) {
  const QuadraticModel model = build_domain_regression_model(setting, problem, dataset);
  Vector grad;
  const double j = quadratic_objective_grad(model, setting.alpha, theta, &grad);
  return {j, std::move(grad)};
}

namespace detail {

template <class Objective>
void spot_check_gradient(Objective&& objective, const Vector& x0, double rel_tol) {
  Vector grad(x0.size());
  const double f0 = objective(x0, &grad);
  if (!std::isfinite(f0)) return;
  const double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-12);
  const double h = 1e-6;
  for (int probe = 0; probe < 3; ++probe) {
    const int i = static_cast<int>((static_cast<long long>(probe) * x0.size()) / 3);
    Vector xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (objective(xp, nullptr) - objective(xm, nullptr)) / (2.0 * h);
    if (std::abs(fd - grad[i]) > rel_tol * std::max(scale, std::abs(fd))) {
      throw std::runtime_error("train: adjoint gradient disagrees with finite differences (component " +
                               std::to_string(i) + ")");
    }
  }
}

}  // namespace detail

/// Train by proximal gradient with BB steps and nonmonotone backtracking.
/// AFLS needs training points; the regression methods need a dataset.
inline TrainRun train(const TrainConfig& config, const Setting& setting, const ControlProblem& problem,
                      const Dataset* dataset = nullptr, std::ostream* warnings = nullptr) {
  setting.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Basis& basis = *setting.basis;
  Vector x0 = config.warm_start ? *config.warm_start : Vector::Zero(basis.size());
  basis.check_theta(x0);

  ProxGradOptions po;
  po.bb_window = config.bb_window;
  po.tol = config.tol;
  po.kappa = config.kappa;
  po.xi = config.xi;
  po.max_iters = config.max_iters;
  po.l1_weight = setting.alpha / 2.0;

  ProxGradResult run;
  if (config.method == Method::afls) {
    BasisBatch batch(basis, static_cast<int>(std::max<std::size_t>(config.training_points.size(), 1)));
    auto objective = [&](const Vector& theta, Vector* grad) {
      return afls_objective_grad(setting, problem, theta, config.training_points, config.dt, batch, grad);
    };
    if (config.verify_gradient) detail::spot_check_gradient(objective, x0, 1e-5);
    run = prox_gradient_descent(objective, std::move(x0), po);
  } else {
    if (!dataset) throw std::invalid_argument("train: regression methods require a dataset");
    const QuadraticModel model = config.method == Method::traj_regression
                                     ? build_traj_regression_model(setting, problem, *dataset, warnings)
                                     : build_domain_regression_model(setting, problem, *dataset, warnings);
    auto objective = [&](const Vector& theta, Vector* grad) {
      return quadratic_objective_grad(model, setting.alpha, theta, grad);
    };
    if (config.verify_gradient) detail::spot_check_gradient(objective, x0, 1e-5);
    run = prox_gradient_descent(objective, std::move(x0), po);
  }

  TrainRun out;
  out.theta_star = run.x;
  out.objective_trace = std::move(run.trace);
  out.residual_trace = std::move(run.residual_trace);
  out.iters = run.iters;
  out.converged = run.converged;
  out.escape_rejections = run.infeasible_rejections;
  out.final_objective = run.final_objective + 0.5 * setting.alpha * run.x.lpNorm<1>();
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!run.abort_reason.empty() && warnings) {
    (*warnings) << "warning: training aborted: " << run.abort_reason << "\n";
  }
  return out;
}

}  // namespace ofl
