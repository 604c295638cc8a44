#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <stdexcept>

#include "ofl/core.hpp"

namespace ofl {

/// Control problem y' = f(y) + B u with running cost l(y) + (beta/2)|u|^2,
/// working domain Omega, initial-condition set omega, and stability margin delta.
struct ControlProblem {
  int state_dim{0};
  int control_dim{0};
  Matrix B;
  double beta{0.0};
  std::function<Vector(const Vector&)> f;
  std::function<Matrix(const Vector&)> Df;
  std::function<double(const Vector&)> running_cost;
  std::function<Vector(const Vector&)> running_cost_grad;
  std::function<Matrix(const Vector&)> running_cost_hess;
  Box Omega;
  Box omega;
  double delta{0.0};

  void validate() const {
    if (state_dim < 1 || control_dim < 1) throw std::invalid_argument("ControlProblem: bad dimensions");
    if (B.rows() != state_dim || B.cols() != control_dim) throw std::invalid_argument("ControlProblem: B shape");
    if (!(beta > 0.0)) throw std::invalid_argument("ControlProblem: beta must be positive");
    if (Omega.dim() != state_dim || omega.dim() != state_dim) throw std::invalid_argument("ControlProblem: box dims");
    if (!Omega.encloses(omega)) throw std::invalid_argument("ControlProblem: closure of omega must lie inside Omega");
    if (!(delta > 0.0)) throw std::invalid_argument("ControlProblem: delta must be positive");
    if (!(delta < Omega.gap_to(omega))) {
      throw std::invalid_argument("ControlProblem: delta must be smaller than dist(omega, boundary of Omega)");
    }
  }

  bool in_stable_region(const Vector& y) const { return Omega.contains_interior(y, delta); }
};

/// Obstacle bump parameters: cost inflation factor gamma on the ball B(z, sigma).
struct ObstacleParams {
  double gamma{0.0};
  Vector z;
  double sigma{1.0};

  void validate() const {
    if (!(gamma >= 0.0)) throw std::invalid_argument("ObstacleParams: gamma must be >= 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("ObstacleParams: sigma must be > 0");
    if (z.size() != 2 || z[1] != 0.0 || !(z[0] < -sigma)) {
      throw std::invalid_argument("ObstacleParams: need z = (z1, 0) with z1 < -sigma");
    }
  }

  static ObstacleParams benchmark(double gamma) {
    ObstacleParams p;
    p.gamma = gamma;
    p.z = Vector::Zero(2);
    p.z[0] = -2.0;
    p.sigma = 1.0;
    return p;
  }
};

namespace detail {

// Bump profile psi(s) = exp(-1/(1-s^2)) on |s| < 1 as a function of t = s^2,
// with derivatives in t. Clamped to exactly zero near and beyond the boundary
// where exp(-1/(1-s^2)) underflows the clamp threshold.
struct BumpEval {
  double psi{0.0};
  double dpsi_dt{0.0};
  double d2psi_dt2{0.0};
};

inline BumpEval bump_in_t(double t) {
  BumpEval out;
  if (t >= 1.0 - 1e-12) return out;
  const double inv = 1.0 / (1.0 - t);
  out.psi = std::exp(-inv);
  const double g1 = -inv * inv;       // g'(t) with g = -(1-t)^{-1}
  const double g2 = -2.0 * inv * inv * inv;
  out.dpsi_dt = out.psi * g1;
  out.d2psi_dt2 = out.psi * (g1 * g1 + g2);
  return out;
}

}  // namespace detail

inline double obstacle_bump(const ObstacleParams& p, const Vector& y) {
  const double t = (y - p.z).squaredNorm() / (p.sigma * p.sigma);
  return detail::bump_in_t(t).psi;
}

inline Vector obstacle_bump_grad(const ObstacleParams& p, const Vector& y) {
  const Vector w = y - p.z;
  const double inv_s2 = 1.0 / (p.sigma * p.sigma);
  const auto b = detail::bump_in_t(w.squaredNorm() * inv_s2);
  return (2.0 * inv_s2 * b.dpsi_dt) * w;
}

inline Matrix obstacle_bump_hess(const ObstacleParams& p, const Vector& y) {
  const Vector w = y - p.z;
  const double inv_s2 = 1.0 / (p.sigma * p.sigma);
  const auto b = detail::bump_in_t(w.squaredNorm() * inv_s2);
  Matrix h = (4.0 * inv_s2 * inv_s2 * b.d2psi_dt2) * (w * w.transpose());
  h.diagonal().array() += 2.0 * inv_s2 * b.dpsi_dt;
  return h;
}

/// Running cost l_gamma(y) = 1/2 |y|^2 (1 + gamma * psi(|y-z|/sigma)).
inline double obstacle_cost(const ObstacleParams& p, const Vector& y) {
  return 0.5 * y.squaredNorm() * (1.0 + p.gamma * obstacle_bump(p, y));
}

inline Vector obstacle_grad(const ObstacleParams& p, const Vector& y) {
  return y * (1.0 + p.gamma * obstacle_bump(p, y)) + (0.5 * y.squaredNorm() * p.gamma) * obstacle_bump_grad(p, y);
}

inline Matrix obstacle_hess(const ObstacleParams& p, const Vector& y) {
  const double psi = obstacle_bump(p, y);
  const Vector gpsi = obstacle_bump_grad(p, y);
  Matrix h = p.gamma * (y * gpsi.transpose() + gpsi * y.transpose()) +
             (0.5 * y.squaredNorm() * p.gamma) * obstacle_bump_hess(p, y);
  h.diagonal().array() += 1.0 + p.gamma * psi;
  return h;
}

struct GammaThreshold {
  double gamma_s{0.0};           // 1 / sup { 2|y||grad psi~| + 1/2 |y| |hess psi~| }
  double sup_term{0.0};          // the sampled supremum in the definition above
  double sup_term_quadratic{0.0};  // variant with |y|^2/2 weighting the Hessian term
};

/// Smoothness threshold gamma_s, sampled on a regular grid over B(z, sigma).
/// The Hessian magnitude is taken in the spectral norm.
inline GammaThreshold gamma_smooth_threshold_detailed(const ObstacleParams& p, int grid_resolution = 1000) {
  if (grid_resolution < 100) throw std::invalid_argument("gamma_smooth_threshold: need >= 100 points per axis");
  GammaThreshold out;
  const double s2 = p.sigma * p.sigma;
  for (int i = 0; i < grid_resolution; ++i) {
    for (int j = 0; j < grid_resolution; ++j) {
      Vector y(2);
      y[0] = p.z[0] - p.sigma + 2.0 * p.sigma * i / (grid_resolution - 1);
      y[1] = p.z[1] - p.sigma + 2.0 * p.sigma * j / (grid_resolution - 1);
      if ((y - p.z).squaredNorm() >= s2) continue;
      const double ny = y.norm();
      const double g = obstacle_bump_grad(p, y).norm();
      const Matrix h = obstacle_bump_hess(p, y);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
      const double hnorm = eig.eigenvalues().cwiseAbs().maxCoeff();
      out.sup_term = std::max(out.sup_term, 2.0 * ny * g + 0.5 * ny * hnorm);
      out.sup_term_quadratic = std::max(out.sup_term_quadratic, 2.0 * ny * g + 0.5 * ny * ny * hnorm);
    }
  }
  out.gamma_s = 1.0 / out.sup_term;
  return out;
}

inline double gamma_smooth_threshold(const ObstacleParams& p, int grid_resolution = 1000) {
  return gamma_smooth_threshold_detailed(p, grid_resolution).gamma_s;
}

/// Benchmark control problem: y' = u on Omega = (-6,6) x (-3,3) with the
/// obstacle running cost; omega = (-5,5) x (-2,2), beta = 0.1, delta = 0.5.
inline ControlProblem make_obstacle_problem(const ObstacleParams& params, double beta = 0.1,
                                            Box Omega = Box({{-6.0, 6.0}, {-3.0, 3.0}}),
                                            Box omega = Box({{-5.0, 5.0}, {-2.0, 2.0}}), double delta = 0.5) {
  params.validate();
  ControlProblem cp;
  cp.state_dim = 2;
  cp.control_dim = 2;
  cp.B = Matrix::Identity(2, 2);
  cp.beta = beta;
  cp.f = [](const Vector& y) { return Vector::Zero(y.size()); };
  cp.Df = [](const Vector& y) { return Matrix::Zero(y.size(), y.size()); };
  cp.running_cost = [params](const Vector& y) { return obstacle_cost(params, y); };
  cp.running_cost_grad = [params](const Vector& y) { return obstacle_grad(params, y); };
  cp.running_cost_hess = [params](const Vector& y) { return obstacle_hess(params, y); };
  cp.Omega = std::move(Omega);
  cp.omega = std::move(omega);
  cp.delta = delta;
  cp.validate();
  return cp;
}

}  // namespace ofl
