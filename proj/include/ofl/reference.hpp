#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofl/core.hpp"
#include "ofl/optimize.hpp"
#include "ofl/problem.hpp"
#include "ofl/simulate.hpp"

namespace ofl {

/// Open-loop optimum for one initial condition: value estimate, optimal
/// state/control path, adjoint, and the gradient target -p(0).
struct ReferenceSolution {
  Vector y0;
  double value{0.0};
  bool converged{false};
  double stationarity_residual{0.0};
  int iters{0};
  Matrix states;           // d x (N+1)
  Matrix controls;         // m x N
  Matrix adjoint;          // d x (N+1); empty when reloaded from cache
  Vector gradV0;           // grad V(y0) estimate = -p(0)
  Vector cumulative_cost;  // left-rectangle partial sums along the path
};

struct OpenLoopOptions {
  double T_ref{3.0};
  double dt{1.0 / 400.0};
  double tol{1e-6};      // max-norm tolerance on the stationarity residual beta*u_j - B^T p_{j+1}
  int max_iters{4000};
  int bb_window{3};
  double kappa{1e-3};
  double xi{0.5};
};

/// Control targets for the regression problems: B^T grad V(y0) = -beta u*(0).
inline Vector gradV_target(const ReferenceSolution& sol, const ControlProblem& problem) {
  if (sol.controls.cols() == 0) throw std::invalid_argument("gradV_target: empty control path");
  return -problem.beta * sol.controls.col(0);
}

namespace detail {

/// Discrete open-loop cost: explicit Euler dynamics, trapezoidal quadrature
/// of the running cost, exact per-interval control energy, and the terminal
/// penalty (sqrt(beta)/2)|y_N|^2 standing in for the tail of the horizon.
struct OpenLoopObjective {
  const ControlProblem* problem;
  Vector y0;
  int steps;
  double dt;

  int m() const { return problem->control_dim; }

  double operator()(const Vector& u_flat, Vector* grad) const {
    const ControlProblem& cp = *problem;
    const int d = cp.state_dim;
    const int N = steps;
    const double sqrt_beta = std::sqrt(cp.beta);
    Matrix states(d, N + 1);
    states.col(0) = y0;
    double cost = 0.0;
    Vector y = y0;
    for (int j = 0; j < N; ++j) {
      const auto u = u_flat.segment(j * m(), m());
      const double w = (j == 0) ? 0.5 * dt : dt;
      cost += w * cp.running_cost(y) + 0.5 * dt * cp.beta * u.squaredNorm();
      y += dt * (cp.f(y) + cp.B * u);
      states.col(j + 1) = y;
      if (!y.allFinite()) return std::numeric_limits<double>::infinity();
    }
    cost += 0.5 * dt * cp.running_cost(y) + 0.5 * sqrt_beta * y.squaredNorm();
    if (!std::isfinite(cost)) return std::numeric_limits<double>::infinity();
    if (grad) {
      Vector lambda = sqrt_beta * y + 0.5 * dt * cp.running_cost_grad(y);
      for (int j = N - 1; j >= 0; --j) {
        const auto u = u_flat.segment(j * m(), m());
        grad->segment(j * m(), m()) = dt * (cp.beta * u + cp.B.transpose() * lambda);
        const Vector yj = states.col(j);
        const double w = (j == 0) ? 0.5 * dt : dt;
        lambda = w * cp.running_cost_grad(yj) + lambda + dt * (cp.Df(yj).transpose() * lambda);
      }
    }
    return cost;
  }

  /// Adjoint node values lambda_j = d(cost)/d(y_j) along the current controls.
  Matrix adjoint_path(const Vector& u_flat) const {
    const ControlProblem& cp = *problem;
    const int d = cp.state_dim;
    const int N = steps;
    Matrix states(d, N + 1);
    states.col(0) = y0;
    Vector y = y0;
    for (int j = 0; j < N; ++j) {
      y += dt * (cp.f(y) + cp.B * u_flat.segment(j * m(), m()));
      states.col(j + 1) = y;
    }
    Matrix lambda(d, N + 1);
    lambda.col(N) = std::sqrt(cp.beta) * y + 0.5 * dt * cp.running_cost_grad(y);
    for (int j = N - 1; j >= 0; --j) {
      const Vector yj = states.col(j);
      const double w = (j == 0) ? 0.5 * dt : dt;
      lambda.col(j) =
          w * cp.running_cost_grad(yj) + lambda.col(j + 1) + dt * (cp.Df(yj).transpose() * lambda.col(j + 1));
    }
    return lambda;
  }
};

}  // namespace detail

/// Initial control guess: rollout of the analytic small-gamma feedback
/// u(y) = -(1/sqrt(beta)) B^T y.
inline Matrix cold_start_controls(const ControlProblem& problem, const Vector& y0, int steps, double dt) {
  Matrix controls(problem.control_dim, steps);
  const double inv_sqrt_beta = 1.0 / std::sqrt(problem.beta);
  Vector y = y0;
  for (int j = 0; j < steps; ++j) {
    const Vector u = -inv_sqrt_beta * (problem.B.transpose() * y);
    controls.col(j) = u;
    y += dt * (problem.f(y) + problem.B * u);
  }
  return controls;
}

/// Solve the truncated open-loop problem from y0 by proximal gradient (no l1
/// term) with BB steps; gradients via the discrete adjoint of the Euler
/// scheme. Non-convergence is flagged, not thrown.
inline ReferenceSolution solve_open_loop(const ControlProblem& problem, const Vector& y0, const OpenLoopOptions& opts,
                                         const Matrix* warm_controls = nullptr) {
  if (!(opts.T_ref > 0.0)) throw std::invalid_argument("solve_open_loop: T_ref must be positive");
  const int steps = step_count(opts.T_ref, opts.dt);
  const int m = problem.control_dim;
  detail::OpenLoopObjective objective{&problem, y0, steps, opts.dt};
  Vector u0(m * steps);
  if (warm_controls) {
    if (warm_controls->rows() != m || warm_controls->cols() != steps) {
      throw std::invalid_argument("solve_open_loop: warm-start control shape mismatch");
    }
    for (int j = 0; j < steps; ++j) u0.segment(j * m, m) = warm_controls->col(j);
  } else {
    const Matrix cold = cold_start_controls(problem, y0, steps, opts.dt);
    for (int j = 0; j < steps; ++j) u0.segment(j * m, m) = cold.col(j);
  }
  ProxGradOptions po;
  po.bb_window = opts.bb_window;
  po.kappa = opts.kappa;
  po.xi = opts.xi;
  po.max_iters = opts.max_iters;
  po.tol = opts.tol * opts.dt;  // gradient components are dt * (beta u_j - B^T p_{j+1})
  po.l1_weight = 0.0;
  ProxGradResult run = prox_gradient_descent(objective, std::move(u0), po);

  ReferenceSolution sol;
  sol.y0 = y0;
  sol.converged = run.converged;
  sol.iters = run.iters;
  sol.value = run.final_objective;
  sol.controls.resize(m, steps);
  for (int j = 0; j < steps; ++j) sol.controls.col(j) = run.x.segment(j * m, m);
  const Trajectory traj = rollout_controls(problem, y0, sol.controls, opts.dt);
  sol.states = traj.states;
  sol.cumulative_cost = traj.cumulative_cost;
  const Matrix lambda = objective.adjoint_path(run.x);
  sol.adjoint = -lambda;
  sol.gradV0 = lambda.col(0);
  double residual = 0.0;
  for (int j = 0; j < steps; ++j) {
    residual = std::max(
        residual,
        (problem.beta * sol.controls.col(j) - problem.B.transpose() * sol.adjoint.col(j + 1)).cwiseAbs().maxCoeff());
  }
  sol.stationarity_residual = residual;
  return sol;
}

/// Reference data for one (gamma, grid) pair with provenance metadata.
struct Dataset {
  double gamma{0.0};
  std::string grid_tag;
  double dt{0.0};
  double T_ref{0.0};
  double tol{0.0};
  double store_T{0.0};
  std::vector<Vector> grid;
  std::vector<ReferenceSolution> points;

  int converged_count() const {
    int c = 0;
    for (const auto& p : points) c += p.converged ? 1 : 0;
    return c;
  }
};

inline std::string gamma_tag(double gamma) { return format_double(gamma, "%g"); }

inline std::string dataset_filename(double gamma, const std::string& grid_tag) {
  return "ref_g" + gamma_tag(gamma) + "_" + grid_tag + ".csv";
}

inline std::string dataset_traj_dirname(double gamma, const std::string& grid_tag) {
  return "ref_g" + gamma_tag(gamma) + "_" + grid_tag + "_traj";
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path values_path = dir / dataset_filename(ds.gamma, ds.grid_tag);
  std::ofstream os(values_path);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + values_path.string());
  os << "# gamma=" << gamma_tag(ds.gamma) << "\n";
  os << "# dt=" << format_double(ds.dt, "%.17g") << "\n";
  os << "# T_ref=" << format_double(ds.T_ref, "%.17g") << "\n";
  os << "# tol=" << format_double(ds.tol, "%.17g") << "\n";
  os << "# store_T=" << format_double(ds.store_T, "%.17g") << "\n";
  os << "# npoints=" << ds.points.size() << "\n";
  os << "y01,y02,value,converged,gradV1,gradV2\n";
  for (const auto& p : ds.points) {
    os << format_double(p.y0[0], "%.17g") << "," << format_double(p.y0[1], "%.17g") << ","
       << format_double(p.value, "%.17g") << "," << (p.converged ? 1 : 0) << ","
       << format_double(p.gradV0[0], "%.17g") << "," << format_double(p.gradV0[1], "%.17g") << "\n";
  }
  const fs::path traj_dir = dir / dataset_traj_dirname(ds.gamma, ds.grid_tag);
  fs::create_directories(traj_dir);
  const int store_steps = std::min<int>(static_cast<int>(ds.points.front().controls.cols()),
                                        static_cast<int>(std::lround(ds.store_T / ds.dt)));
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    const auto& p = ds.points[i];
    Trajectory traj;
    traj.dt = ds.dt;
    traj.states = p.states.leftCols(store_steps + 1);
    traj.controls = p.controls.leftCols(store_steps);
    traj.cumulative_cost = p.cumulative_cost.size() > store_steps
                               ? Vector(p.cumulative_cost.head(store_steps + 1))
                               : Vector(Vector::Zero(store_steps + 1));
    std::ofstream ts(traj_dir / ("traj_" + std::to_string(i) + ".csv"));
    write_trajectory_csv(ts, traj);
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path, int d, int m) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_trajectory_csv: cannot open " + path.string());
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<double>> state_rows;
  std::vector<std::vector<double>> control_rows;
  std::vector<double> times, costs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != 1 + d + m + 1) {
      throw std::runtime_error("read_trajectory_csv: malformed row in " + path.string());
    }
    times.push_back(std::stod(cells[0]));
    std::vector<double> st(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) st[static_cast<std::size_t>(i)] = std::stod(cells[static_cast<std::size_t>(1 + i)]);
    state_rows.push_back(std::move(st));
    if (!cells[static_cast<std::size_t>(1 + d)].empty()) {
      std::vector<double> cu(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) cu[static_cast<std::size_t>(i)] = std::stod(cells[static_cast<std::size_t>(1 + d + i)]);
      control_rows.push_back(std::move(cu));
    }
    costs.push_back(std::stod(cells.back()));
  }
  Trajectory traj;
  traj.dt = times.size() >= 2 ? times[1] - times[0] : 0.0;
  traj.states.resize(d, static_cast<int>(state_rows.size()));
  for (std::size_t j = 0; j < state_rows.size(); ++j) {
    for (int i = 0; i < d; ++i) traj.states(i, static_cast<int>(j)) = state_rows[j][static_cast<std::size_t>(i)];
  }
  traj.controls.resize(m, static_cast<int>(control_rows.size()));
  for (std::size_t j = 0; j < control_rows.size(); ++j) {
    for (int i = 0; i < m; ++i) traj.controls(i, static_cast<int>(j)) = control_rows[j][static_cast<std::size_t>(i)];
  }
  traj.cumulative_cost = Eigen::Map<const Vector>(costs.data(), static_cast<int>(costs.size()));
  traj.cost = costs.empty() ? 0.0 : costs.back();
  return traj;
}

}  // namespace detail

/// Load a cached dataset when present with matching provenance; nullopt otherwise.
inline std::optional<Dataset> load_dataset(const std::filesystem::path& dir, double gamma, const std::string& grid_tag,
                                           const std::vector<Vector>& grid, const OpenLoopOptions& opts,
                                           double store_T) {
  namespace fs = std::filesystem;
  const fs::path values_path = dir / dataset_filename(gamma, grid_tag);
  if (!fs::exists(values_path)) return std::nullopt;
  std::ifstream is(values_path);
  if (!is) return std::nullopt;
  Dataset ds;
  ds.gamma = gamma;
  ds.grid_tag = grid_tag;
  std::string line;
  std::map<std::string, std::string> meta;
  while (std::getline(is, line)) {
    if (line.rfind("# ", 0) == 0) {
      const std::size_t eq = line.find('=');
      if (eq != std::string::npos) meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    break;  // header row consumed
  }
  auto meta_is = [&](const std::string& key, double want) {
    auto it = meta.find(key);
    return it != meta.end() && std::stod(it->second) == want;
  };
  if (!meta_is("dt", opts.dt) || !meta_is("T_ref", opts.T_ref) || !meta_is("tol", opts.tol) ||
      !meta_is("store_T", store_T)) {
    return std::nullopt;
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 6) return std::nullopt;
    ReferenceSolution p;
    p.y0 = Vector(2);
    p.y0[0] = std::stod(cells[0]);
    p.y0[1] = std::stod(cells[1]);
    p.value = std::stod(cells[2]);
    p.converged = cells[3] == "1";
    p.gradV0 = Vector(2);
    p.gradV0[0] = std::stod(cells[4]);
    p.gradV0[1] = std::stod(cells[5]);
    ds.points.push_back(std::move(p));
  }
  if (ds.points.size() != grid.size()) return std::nullopt;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if ((ds.points[i].y0 - grid[i]).cwiseAbs().maxCoeff() > 1e-14) return std::nullopt;
  }
  ds.dt = opts.dt;
  ds.T_ref = opts.T_ref;
  ds.tol = opts.tol;
  ds.store_T = store_T;
  ds.grid = grid;
  const fs::path traj_dir = dir / dataset_traj_dirname(gamma, grid_tag);
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    const fs::path tp = traj_dir / ("traj_" + std::to_string(i) + ".csv");
    if (!fs::exists(tp)) return std::nullopt;
    const Trajectory traj = detail::read_trajectory_csv(tp, 2, 2);
    ds.points[i].states = traj.states;
    ds.points[i].controls = traj.controls;
    ds.points[i].cumulative_cost = traj.cumulative_cost;
  }
  return ds;
}

/// Generate (or load from cache) reference datasets for an ascending gamma
/// sweep over one grid. Within the sweep each point's control sequence is
/// warm-started from the previous gamma's solution. Results are always
/// returned in their cached (round-tripped) representation so downstream
/// metrics are identical whether or not the cache was hit.
inline std::vector<Dataset> generate_datasets(const std::function<ControlProblem(double)>& problem_for_gamma,
                                              std::vector<double> gammas, const std::vector<Vector>& grid,
                                              const std::string& grid_tag, const OpenLoopOptions& opts,
                                              const std::filesystem::path& cache_dir, double store_T,
                                              std::ostream* log = nullptr) {
  if (grid.empty()) throw std::invalid_argument("generate_datasets: empty grid");
  std::sort(gammas.begin(), gammas.end());
  bool all_cached = true;
  std::vector<Dataset> out;
  for (double g : gammas) {
    auto ds = load_dataset(cache_dir, g, grid_tag, grid, opts, store_T);
    if (!ds) {
      all_cached = false;
      break;
    }
    out.push_back(std::move(*ds));
  }
  if (all_cached) return out;
  out.clear();

  const int steps = step_count(opts.T_ref, opts.dt);
  std::vector<Matrix> warm(grid.size());
  bool have_warm = false;
  for (double g : gammas) {
    const ControlProblem problem = problem_for_gamma(g);
    Dataset ds;
    ds.gamma = g;
    ds.grid_tag = grid_tag;
    ds.dt = opts.dt;
    ds.T_ref = opts.T_ref;
    ds.tol = opts.tol;
    ds.store_T = store_T;
    ds.grid = grid;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      ReferenceSolution sol =
          solve_open_loop(problem, grid[i], opts, have_warm ? &warm[i] : nullptr);
      if (!sol.converged && log) {
        (*log) << "warning: reference solve not converged at gamma=" << gamma_tag(g) << " point " << i
               << " (residual " << sol.stationarity_residual << ")\n";
      }
      warm[i] = sol.controls;
      ds.points.push_back(std::move(sol));
    }
    (void)steps;
    have_warm = true;
    save_dataset(cache_dir, ds);
  }
  for (double g : gammas) {
    auto ds = load_dataset(cache_dir, g, grid_tag, grid, opts, store_T);
    if (!ds) throw std::runtime_error("generate_datasets: cache round-trip failed");
    out.push_back(std::move(*ds));
  }
  return out;
}

}  // namespace ofl
