#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofl/core.hpp"

namespace ofl {

inline Vector soft_threshold(const Vector& v, double t) {
  if (t < 0.0) throw std::invalid_argument("soft_threshold: negative threshold");
  return v.unaryExpr([t](double x) { return x > t ? x - t : (x < -t ? x + t : 0.0); });
}

struct ProxGradOptions {
  int bb_window{3};        // nonmonotone line-search window length
  double tol{1e-6};        // max-norm tolerance on the unit-step prox residual
  double kappa{1e-3};      // sufficient-decrease constant
  double xi{0.5};          // backtracking shrink factor
  int max_iters{2000};
  double l1_weight{0.0};   // weight of the |x|_1 term handled by the prox
  double step0{1.0};
  double step_min{1e-8};
  double step_max{1e8};
  int max_backtracks{60};

  void validate() const {
    if (bb_window < 1) throw std::invalid_argument("ProxGradOptions: bb_window must be >= 1");
    if (!(kappa > 0.0)) throw std::invalid_argument("ProxGradOptions: kappa must be > 0");
    if (!(options_xi_ok(xi))) throw std::invalid_argument("ProxGradOptions: xi must be in (0,1)");
    if (l1_weight < 0.0) throw std::invalid_argument("ProxGradOptions: l1_weight must be >= 0");
  }

 private:
  static bool options_xi_ok(double xi) { return xi > 0.0 && xi < 1.0; }
};

struct AcceptedStep {
  double objective{0.0};    // smooth objective at the accepted point
  double step{0.0};         // step length used (0 for the initial point)
  double residual_sq{0.0};  // |x_new - x|^2 / step^2 at acceptance
};

struct ProxGradResult {
  Vector x;
  std::vector<AcceptedStep> trace;      // accepted points, including the start
  std::vector<double> residual_trace;   // unit-step prox residual max-norm per iteration
  int iters{0};
  bool converged{false};
  int infeasible_rejections{0};         // trial points with non-finite objective
  std::string abort_reason;
  double final_objective{0.0};          // smooth objective at x
  Vector final_gradient;
};

/// Proximal gradient descent with Barzilai-Borwein step lengths and a
/// nonmonotone backtracking line search. The objective callback returns the
/// smooth part (may be +inf as an infeasibility sentinel) and fills the
/// gradient when the pointer is non-null. The l1 term l1_weight*|x|_1 is
/// handled by the prox map. Terminates when the unit-step prox residual
///   x - soft_threshold(x - grad f(x), l1_weight)
/// has max-norm <= tol, or after max_iters accepted steps.
template <class Objective>
ProxGradResult prox_gradient_descent(Objective&& objective, Vector x0, const ProxGradOptions& opts) {
  opts.validate();
  ProxGradResult res;
  res.x = std::move(x0);
  Vector grad(res.x.size());
  double fx = objective(res.x, &grad);
  if (!std::isfinite(fx)) throw std::invalid_argument("prox_gradient_descent: infeasible starting point");
  res.trace.push_back({fx, 0.0, 0.0});

  std::vector<double> window{fx};
  double step = opts.step0;
  Vector prev_x, prev_grad;
  bool have_history = false;
  Vector trial(res.x.size()), trial_grad(res.x.size());

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    const double residual = (res.x - soft_threshold(res.x - grad, opts.l1_weight)).cwiseAbs().maxCoeff();
    res.residual_trace.push_back(residual);
    if (residual <= opts.tol) {
      res.converged = true;
      break;
    }

    if (have_history) {
      const Vector s = res.x - prev_x;
      const Vector yd = grad - prev_grad;
      const double sty = s.dot(yd);
      double bb = s.squaredNorm() / sty;
      if (!(bb > 0.0) || !std::isfinite(bb)) bb = sty / yd.squaredNorm();
      if (bb > 0.0 && std::isfinite(bb)) step = bb;
    }
    step = std::clamp(step, opts.step_min, opts.step_max);

    const double ref = *std::max_element(window.begin(), window.end());
    bool accepted = false;
    double f_trial = 0.0;
    bool grad_at_trial = false;
    double residual_sq = 0.0;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
      trial = soft_threshold(res.x - step * grad, step * opts.l1_weight);
      grad_at_trial = (bt == 0);  // first trial usually accepted; fetch its gradient eagerly
      f_trial = objective(trial, grad_at_trial ? &trial_grad : nullptr);
      residual_sq = (trial - res.x).squaredNorm() / (step * step);
      if (std::isfinite(f_trial) && f_trial <= ref - opts.kappa * step * residual_sq) {
        accepted = true;
        break;
      }
      if (!std::isfinite(f_trial)) ++res.infeasible_rejections;
      step *= opts.xi;
      if (bt == opts.max_backtracks) break;
    }
    if (!accepted) {
      res.abort_reason = "line search failed after " + std::to_string(opts.max_backtracks) + " reductions";
      break;
    }
    prev_x = res.x;
    prev_grad = grad;
    res.x = trial;
    if (grad_at_trial) {
      grad = trial_grad;
      fx = f_trial;
    } else {
      fx = objective(res.x, &grad);
    }
    have_history = true;
    res.iters = iter;
    res.trace.push_back({fx, step, residual_sq});
    window.push_back(fx);
    if (static_cast<int>(window.size()) > opts.bb_window) window.erase(window.begin());
  }

  res.final_objective = fx;
  res.final_gradient = grad;
  if (res.residual_trace.empty()) {
    // max_iters == 0: report the stationarity of the starting point.
    res.residual_trace.push_back((res.x - soft_threshold(res.x - grad, opts.l1_weight)).cwiseAbs().maxCoeff());
    res.converged = res.residual_trace.back() <= opts.tol;
  }
  return res;
}

}  // namespace ofl
