#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofl/adjoint.hpp"
#include "ofl/basis.hpp"
#include "ofl/config.hpp"
#include "ofl/core.hpp"
#include "ofl/learn.hpp"
#include "ofl/problem.hpp"
#include "ofl/reference.hpp"
#include "ofl/simulate.hpp"

namespace ofl {

/// Full experiment protocol: grids, parameter sweeps, optimizer constants,
/// and output paths.
struct ExperimentConfig {
  // benchmark problem
  double z1{-2.0};
  double sigma{1.0};
  double beta{0.1};
  double delta{0.5};
  Box Omega{{{-6.0, 6.0}, {-3.0, 3.0}}};
  Box omega{{{-5.0, 5.0}, {-2.0, 2.0}}};
  // sweep
  std::vector<double> gamma_list{1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0};
  std::vector<double> alpha_list{1e-1, 1e-3, 1e-5, 1e-7, 1e-9};
  std::vector<int> k_list{1, 2};
  std::vector<int> n_list{10, 20, 30, 40};
  IndexKind index_kind{IndexKind::full};
  std::vector<Method> methods{Method::afls, Method::traj_regression, Method::domain_regression};
  double T{1.0};
  double dt{1.0 / 400.0};
  std::vector<int> train_grid{16, 16};
  std::vector<int> test_grid{32, 32};
  // reference solver
  double T_ref{3.0};
  double ref_tol{1e-6};
  int ref_max_iters{4000};
  // trainer
  int bb_window{3};
  double tol{1e-6};
  double kappa{1e-3};
  double xi{0.5};
  int max_iters{2000};
  std::string out_dir{"out"};

  /// Desk-scale profile: reduced grids and sweep lists.
  void apply_fast() {
    train_grid = {8, 8};
    test_grid = {12, 12};
    n_list = {10, 20};
    gamma_list = {1e-3, 1.0, 1e3};
  }

  static ExperimentConfig from_config(const Config& cfg) {
    ExperimentConfig e;
    e.z1 = cfg.get_double("z1", e.z1);
    e.sigma = cfg.get_double("sigma", e.sigma);
    e.beta = cfg.get_double("beta", e.beta);
    e.delta = cfg.get_double("delta", e.delta);
    if (cfg.has("Omega")) e.Omega = Box::parse(cfg.get_string("Omega", ""));
    if (cfg.has("omega")) e.omega = Box::parse(cfg.get_string("omega", ""));
    e.gamma_list = cfg.get_double_list("gamma_list", e.gamma_list);
    e.alpha_list = cfg.get_double_list("alpha_list", e.alpha_list);
    e.k_list = cfg.get_int_list("k_list", e.k_list);
    e.n_list = cfg.get_int_list("n_list", e.n_list);
    if (cfg.has("index_kind")) e.index_kind = index_kind_from_string(cfg.get_string("index_kind", "full"));
    if (cfg.has("methods")) {
      e.methods.clear();
      for (const auto& name : cfg.get_string_list("methods", {})) e.methods.push_back(method_from_string(name));
    }
    e.T = cfg.get_double("T", e.T);
    e.dt = cfg.get_double("dt", e.dt);
    if (cfg.has("train_grid")) e.train_grid = parse_grid_spec(cfg.get_string("train_grid", ""));
    if (cfg.has("test_grid")) e.test_grid = parse_grid_spec(cfg.get_string("test_grid", ""));
    e.T_ref = cfg.get_double("T_ref", e.T_ref);
    e.ref_tol = cfg.get_double("ref_tol", e.ref_tol);
    e.ref_max_iters = cfg.get_int("ref_max_iters", e.ref_max_iters);
    e.bb_window = cfg.get_int("bb_window", e.bb_window);
    e.tol = cfg.get_double("tol", e.tol);
    e.kappa = cfg.get_double("kappa", e.kappa);
    e.xi = cfg.get_double("xi", e.xi);
    e.max_iters = cfg.get_int("max_iters", e.max_iters);
    e.out_dir = cfg.get_string("out_dir", e.out_dir);
    return e;
  }

  ControlProblem problem_for_gamma(double gamma) const {
    ObstacleParams params;
    params.gamma = gamma;
    params.z = Vector::Zero(2);
    params.z[0] = z1;
    params.sigma = sigma;
    return make_obstacle_problem(params, beta, Omega, omega, delta);
  }

  OpenLoopOptions reference_options() const {
    OpenLoopOptions o;
    o.T_ref = T_ref;
    o.dt = dt;
    o.tol = ref_tol;
    o.max_iters = ref_max_iters;
    o.bb_window = bb_window;
    o.kappa = kappa;
    o.xi = xi;
    return o;
  }

  std::string canonical_string() const {
    std::ostringstream os;
    os << "z1=" << z1 << ";sigma=" << sigma << ";beta=" << beta << ";delta=" << delta
       << ";Omega=" << Omega.to_string() << ";omega=" << omega.to_string() << ";gammas=";
    for (double g : gamma_list) os << g << ",";
    os << ";alphas=";
    for (double a : alpha_list) os << a << ",";
    os << ";ks=";
    for (int k : k_list) os << k << ",";
    os << ";ns=";
    for (int n : n_list) os << n << ",";
    os << ";kind=" << to_string(index_kind) << ";methods=";
    for (Method m : methods) os << to_string(m) << ",";
    os << ";T=" << T << ";dt=" << dt << ";train=";
    for (int g : train_grid) os << g << "x";
    os << ";test=";
    for (int g : test_grid) os << g << "x";
    os << ";T_ref=" << T_ref << ";ref_tol=" << ref_tol << ";ref_max_iters=" << ref_max_iters
       << ";bb=" << bb_window << ";tol=" << tol << ";kappa=" << kappa << ";xi=" << xi
       << ";max_iters=" << max_iters;
    return os.str();
  }

  std::string cache_key() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canonical_string()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }
};

inline std::string grid_tag(const std::vector<int>& grid) {
  std::string tag;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) tag += 'x';
    tag += std::to_string(grid[i]);
  }
  return tag;
}

// --- error measures --------------------------------------------------------

/// Normalized mean absolute value error: sum |V_i - cost_i| / sum V_i.
inline double nmae_v(const std::vector<double>& reference_values, const std::vector<double>& rollout_costs) {
  if (reference_values.empty() || reference_values.size() != rollout_costs.size()) {
    throw std::invalid_argument("nmae_v: need matching nonempty value lists");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < reference_values.size(); ++i) {
    num += std::abs(reference_values[i] - rollout_costs[i]);
    den += reference_values[i];
  }
  if (!(den > 0.0)) throw std::invalid_argument("nmae_v: reference values sum to zero; metric undefined");
  return num / den;
}

/// Normalized control error: sum_i ||u*_i - u_i||_L2 / sum_i ||u*_i||_L2,
/// with L2 norms over (0,T) by the rectangle rule on the common grid.
inline double nmrse_c(const std::vector<Matrix>& reference_controls, const std::vector<Matrix>& feedback_controls,
                      double dt) {
  if (reference_controls.empty() || reference_controls.size() != feedback_controls.size()) {
    throw std::invalid_argument("nmrse_c: need matching nonempty control lists");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < reference_controls.size(); ++i) {
    const Matrix& uref = reference_controls[i];
    const Matrix& ufb = feedback_controls[i];
    const int steps = static_cast<int>(std::min(uref.cols(), ufb.cols()));
    double diff2 = 0.0, ref2 = 0.0;
    for (int j = 0; j < steps; ++j) diff2 += dt * (uref.col(j) - ufb.col(j)).squaredNorm();
    for (int j = 0; j < uref.cols(); ++j) ref2 += dt * uref.col(j).squaredNorm();
    num += std::sqrt(diff2);
    den += std::sqrt(ref2);
  }
  if (!(den > 0.0)) throw std::invalid_argument("nmrse_c: reference controls vanish; metric undefined");
  return num / den;
}

struct MetricsRow {
  std::string method;
  double gamma{0.0};
  int k{0};
  int n{0};
  double alpha{0.0};
  std::string split;
  double nmae_v{0.0};
  double nmrse_c{0.0};
  double train_seconds{0.0};
  int iters{0};
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "method,gamma,k,n,alpha,split,nmae_v,nmrse_c,train_seconds,iters\n";
  for (const auto& r : rows) {
    os << r.method << "," << format_double(r.gamma, "%g") << "," << r.k << "," << r.n << ","
       << format_double(r.alpha, "%g") << "," << r.split << "," << format_double(r.nmae_v, "%.17g") << ","
       << format_double(r.nmrse_c, "%.17g") << "," << format_double(r.train_seconds, "%.3f") << "," << r.iters
       << "\n";
  }
}

// --- model evaluation ------------------------------------------------------

struct SplitMetrics {
  double nmae{0.0};
  double nmrse{0.0};
  int escapes{0};
  int points{0};
};

/// Closed-loop metrics of a trained coefficient vector against a reference
/// dataset. Non-converged reference points are excluded from both measures.
inline SplitMetrics evaluate_model(const ControlProblem& problem, const Basis& basis, const Vector& theta,
                                   const Dataset& dataset, double T, double dt) {
  std::vector<Vector> points;
  std::vector<const ReferenceSolution*> refs;
  for (const auto& p : dataset.points) {
    if (!p.converged) continue;
    points.push_back(p.y0);
    refs.push_back(&p);
  }
  if (points.empty()) throw std::invalid_argument("evaluate_model: no converged reference points");
  const EvalRollouts rollouts = batch_eval_rollouts(problem, basis, theta, points, T, dt, /*keep_controls=*/true);
  SplitMetrics out;
  out.points = static_cast<int>(points.size());
  std::vector<double> values, costs;
  std::vector<Matrix> uref, ufb;
  const int steps = step_count(T, dt);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    values.push_back(refs[i]->value);
    costs.push_back(rollouts.costs[static_cast<int>(i)]);
    if (static_cast<int>(refs[i]->controls.cols()) < steps) {
      throw std::invalid_argument("evaluate_model: cached reference trajectory shorter than the horizon");
    }
    uref.emplace_back(refs[i]->controls.leftCols(steps));
    ufb.push_back(rollouts.controls[i]);
    out.escapes += rollouts.escaped[i] ? 1 : 0;
  }
  out.nmae = nmae_v(values, costs);
  out.nmrse = nmrse_c(uref, ufb, dt);
  return out;
}

// --- sweep -----------------------------------------------------------------

namespace detail {

struct CellResult {
  double alpha{0.0};
  double nmae_train{0.0}, nmrse_train{0.0};
  double nmae_test{0.0}, nmrse_test{0.0};
  double train_seconds{0.0};
  int iters{0};
  double final_objective{0.0};
  std::string model_file;
};

inline std::string cell_tag(const std::string& key, Method m, int k, int n, double gamma) {
  return key + "_" + to_string(m) + "_k" + std::to_string(k) + "_n" + std::to_string(n) + "_g" + gamma_tag(gamma);
}

inline void write_cell(const std::filesystem::path& path, const CellResult& c) {
  std::ofstream os(path);
  os << "alpha=" << format_double(c.alpha, "%g") << "\n";
  os << "nmae_train=" << format_double(c.nmae_train, "%.17g") << "\n";
  os << "nmrse_train=" << format_double(c.nmrse_train, "%.17g") << "\n";
  os << "nmae_test=" << format_double(c.nmae_test, "%.17g") << "\n";
  os << "nmrse_test=" << format_double(c.nmrse_test, "%.17g") << "\n";
  os << "train_seconds=" << format_double(c.train_seconds, "%.17g") << "\n";
  os << "iters=" << c.iters << "\n";
  os << "final_objective=" << format_double(c.final_objective, "%.17g") << "\n";
  os << "model=" << c.model_file << "\n";
}

inline std::optional<CellResult> read_cell(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) return std::nullopt;
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"alpha", "nmae_train", "nmrse_train", "nmae_test", "nmrse_test", "train_seconds", "iters",
                          "model"}) {
    if (!kv.count(key)) return std::nullopt;
  }
  CellResult c;
  c.alpha = std::stod(kv["alpha"]);
  c.nmae_train = std::stod(kv["nmae_train"]);
  c.nmrse_train = std::stod(kv["nmrse_train"]);
  c.nmae_test = std::stod(kv["nmae_test"]);
  c.nmrse_test = std::stod(kv["nmrse_test"]);
  c.train_seconds = std::stod(kv["train_seconds"]);
  c.iters = std::stoi(kv["iters"]);
  if (kv.count("final_objective")) c.final_objective = std::stod(kv["final_objective"]);
  c.model_file = kv["model"];
  return c;
}

}  // namespace detail

/// Run the full sweep protocol. Per-cell results (selected penalty, metrics,
/// trained model) are cached under out_dir keyed by the configuration, so a
/// repeated run reproduces metrics.csv byte for byte.
inline std::vector<MetricsRow> run_sweep(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.out_dir);
  const fs::path ref_dir = out_dir / "ref";
  const fs::path models_dir = out_dir / "models";
  const fs::path cells_dir = out_dir / "cells";
  fs::create_directories(ref_dir);
  fs::create_directories(models_dir);
  fs::create_directories(cells_dir);
  const std::string key = cfg.cache_key();

  std::vector<double> gammas = cfg.gamma_list;
  std::sort(gammas.begin(), gammas.end());
  std::vector<double> alphas = cfg.alpha_list;
  std::sort(alphas.begin(), alphas.end(), std::greater<double>());  // ties in the selection go to larger alpha

  const auto train_pts = cell_centered_grid(cfg.omega, cfg.train_grid);
  const auto test_pts = cell_centered_grid(cfg.omega, cfg.test_grid);
  auto problem_factory = [&cfg](double g) { return cfg.problem_for_gamma(g); };
  if (log) (*log) << "building reference datasets...\n";
  const auto train_refs = generate_datasets(problem_factory, gammas, train_pts, grid_tag(cfg.train_grid),
                                            cfg.reference_options(), ref_dir, cfg.T, log);
  const auto test_refs = generate_datasets(problem_factory, gammas, test_pts, grid_tag(cfg.test_grid),
                                           cfg.reference_options(), ref_dir, cfg.T, log);

  std::vector<MetricsRow> rows;
  for (Method method : cfg.methods) {
    for (int k : cfg.k_list) {
      for (int n : cfg.n_list) {
        const Basis basis(InnerProductOrder{k}, IndexSet::make(cfg.index_kind, n, 2), cfg.Omega);
        Vector warm = Vector::Zero(basis.size());
        for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
          const double gamma = gammas[gi];
          const ControlProblem problem = cfg.problem_for_gamma(gamma);
          const std::string tag = detail::cell_tag(key, method, k, n, gamma);
          const fs::path cell_path = cells_dir / (tag + ".cell");
          std::optional<detail::CellResult> cell = detail::read_cell(cell_path);
          if (cell) {
            std::ifstream ms(models_dir / cell->model_file);
            if (ms) {
              BasisFile bf = load_basis(ms);
              if (bf.theta.size() == basis.size()) {
                warm = bf.theta;
              } else {
                cell.reset();
              }
            } else {
              cell.reset();
            }
          }
          if (!cell) {
            if (log) (*log) << "training " << to_string(method) << " k=" << k << " n=" << n << " gamma=" << gamma
                            << "\n";
            detail::CellResult best;
            Vector best_theta;
            bool have_best = false;
            for (double alpha : alphas) {
              Setting setting{&basis, alpha, cfg.T};
              TrainConfig tc;
              tc.method = method;
              tc.bb_window = cfg.bb_window;
              tc.tol = cfg.tol;
              tc.kappa = cfg.kappa;
              tc.xi = cfg.xi;
              tc.max_iters = cfg.max_iters;
              tc.dt = cfg.dt;
              tc.training_points = train_pts;
              tc.warm_start = warm;
              const Dataset* ds = &train_refs[gi];
              TrainRun run = train(tc, setting, problem, ds, log);
              const SplitMetrics train_metrics = evaluate_model(problem, basis, run.theta_star, train_refs[gi],
                                                                cfg.T, cfg.dt);
              if (log) {
                (*log) << "  alpha=" << alpha << " iters=" << run.iters << " nmae_train=" << train_metrics.nmae
                       << (run.converged ? "" : " (not converged)") << "\n";
              }
              if (!have_best || train_metrics.nmae < best.nmae_train) {
                have_best = true;
                best.alpha = alpha;
                best.nmae_train = train_metrics.nmae;
                best.nmrse_train = train_metrics.nmrse;
                best.train_seconds = run.wall_seconds;
                best.iters = run.iters;
                best.final_objective = run.final_objective;
                best_theta = run.theta_star;
              }
            }
            const SplitMetrics test_metrics =
                evaluate_model(problem, basis, best_theta, test_refs[gi], cfg.T, cfg.dt);
            best.nmae_test = test_metrics.nmae;
            best.nmrse_test = test_metrics.nmrse;
            best.model_file = tag + ".model";
            {
              std::ofstream ms(models_dir / best.model_file);
              save_basis(ms, basis, best_theta,
                         {{"method", to_string(method)},
                          {"gamma", gamma_tag(gamma)},
                          {"alpha", format_double(best.alpha, "%g")},
                          {"T", format_double(cfg.T, "%g")},
                          {"iters", std::to_string(best.iters)},
                          {"final_objective", format_double(best.final_objective, "%.17g")}});
            }
            detail::write_cell(cell_path, best);
            warm = best_theta;
            cell = best;
          }
          MetricsRow train_row{to_string(method), gamma,           k,
                               n,                 cell->alpha,     "train",
                               cell->nmae_train,  cell->nmrse_train, cell->train_seconds,
                               cell->iters};
          MetricsRow test_row{to_string(method), gamma,          k,
                              n,                 cell->alpha,    "test",
                              cell->nmae_test,   cell->nmrse_test, cell->train_seconds,
                              cell->iters};
          rows.push_back(train_row);
          rows.push_back(test_row);
        }
      }
    }
  }
  std::ofstream os(out_dir / "metrics.csv");
  write_metrics_csv(os, rows);
  return rows;
}

// --- level sets ------------------------------------------------------------

/// Export `x,y,value` samples of either the reference value function or the
/// closed-loop rollout cost of a saved model over a grid in omega.
inline void export_levelsets_reference(const ExperimentConfig& cfg, double gamma, const std::vector<int>& grid_spec,
                                       std::ostream& os, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const fs::path ref_dir = fs::path(cfg.out_dir) / "ref";
  fs::create_directories(ref_dir);
  const auto grid = cell_centered_grid(cfg.omega, grid_spec);
  auto factory = [&cfg](double g) { return cfg.problem_for_gamma(g); };
  const auto datasets = generate_datasets(factory, {gamma}, grid, grid_tag(grid_spec) + "lv",
                                          cfg.reference_options(), ref_dir, cfg.T, log);
  os << "x,y,value\n";
  for (const auto& p : datasets.front().points) {
    os << format_double(p.y0[0], "%.17g") << "," << format_double(p.y0[1], "%.17g") << ","
       << format_double(p.value, "%.17g") << "\n";
  }
}

inline void export_levelsets_rollout(const ExperimentConfig& cfg, double gamma, const Basis& basis,
                                     const Vector& theta, const std::vector<int>& grid_spec, std::ostream& os) {
  const auto grid = cell_centered_grid(cfg.omega, grid_spec);
  const ControlProblem problem = cfg.problem_for_gamma(gamma);
  const EvalRollouts rollouts = batch_eval_rollouts(problem, basis, theta, grid, cfg.T, cfg.dt, false);
  os << "x,y,value\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    os << format_double(grid[i][0], "%.17g") << "," << format_double(grid[i][1], "%.17g") << ","
       << format_double(rollouts.costs[static_cast<int>(i)], "%.17g") << "\n";
  }
}

// --- gradient check --------------------------------------------------------

/// Compare the discrete-adjoint gradient of the averaged objective with
/// central finite differences on random coefficient/initial-condition pairs.
inline bool grad_check_report(const ControlProblem& problem, const Basis& basis, double T, double dt, int pairs,
                              unsigned seed, std::ostream& os, double rel_tol = 1e-6) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  bool all_pass = true;
  for (int trial = 0; trial < pairs; ++trial) {
    Vector theta(basis.size());
    for (int i = 0; i < theta.size(); ++i) theta[i] = 0.02 * unit(rng);
    Vector y0(2);
    y0[0] = 0.5 * problem.omega[0].length() * 0.45 * unit(rng) + problem.omega[0].center();
    y0[1] = 0.5 * problem.omega[1].length() * 0.45 * unit(rng) + problem.omega[1].center();
    std::vector<Vector> pts{y0};
    Setting setting{&basis, 0.0, T};
    BasisBatch batch(basis, 1);
    Vector grad(basis.size());
    const double j0 = afls_objective_grad(setting, problem, theta, pts, dt, batch, &grad);
    if (!std::isfinite(j0)) {
      os << "pair " << trial << ": rollout escaped, skipping\n";
      continue;
    }
    const double h = 1e-6;
    double worst = 0.0;
    Vector fd(basis.size());
    for (int i = 0; i < basis.size(); ++i) {
      Vector tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      const double jp = afls_objective_grad(setting, problem, tp, pts, dt, batch, nullptr);
      const double jm = afls_objective_grad(setting, problem, tm, pts, dt, batch, nullptr);
      fd[i] = (jp - jm) / (2.0 * h);
    }
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
    worst = (grad - fd).cwiseAbs().maxCoeff() / scale;
    const bool pass = worst <= rel_tol;
    all_pass = all_pass && pass;
    os << "pair " << trial << ": max relative gradient error " << format_double(worst, "%.3e") << " -> "
       << (pass ? "PASS" : "FAIL") << "\n";
  }
  return all_pass;
}

}  // namespace ofl
