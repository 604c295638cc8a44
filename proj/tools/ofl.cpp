// Command-line front end: reference data generation, single-cell training,
// the full sweep protocol, model evaluation, level-set export, and the
// adjoint-gradient check.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "ofl/ofl.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  bool fast = false;
};

ofl::ExperimentConfig load_experiment(const GlobalArgs& args, CLI::App* cmd) {
  ofl::Config cfg;
  if (!args.config_path.empty()) cfg = ofl::Config::from_file(args.config_path);
  ofl::ExperimentConfig e = ofl::ExperimentConfig::from_config(cfg);
  if (args.fast) e.apply_fast();
  if (!args.out_dir.empty()) e.out_dir = args.out_dir;
  (void)cmd;
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback-law learning for infinite-horizon control benchmarks"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path, "key = value configuration file");
  app.add_option("--out", global.out_dir, "output directory (default from config, else 'out')");
  app.add_flag("--fast", global.fast, "desk-scale profile: 8x8/12x12 grids, n in {10,20}, gamma in {1e-3,1,1e3}");

  // reference
  auto* ref_cmd = app.add_subcommand("reference", "build reference datasets for the configured gamma list");
  std::string ref_grid = "16x16";
  std::vector<double> ref_gammas;
  ref_cmd->add_option("--grid", ref_grid, "grid spec, e.g. 16x16");
  ref_cmd->add_option("--gammas", ref_gammas, "override gamma list")->delimiter(',');

  // train
  auto* train_cmd = app.add_subcommand("train", "train a single (method,k,n,gamma,alpha) cell and save the model");
  std::string train_method = "afls";
  int train_k = 1, train_n = 10;
  double train_gamma = 1e-3, train_alpha = 1e-9;
  std::string train_model_out = "model.txt";
  train_cmd->add_option("--method", train_method, "afls | traj_regression | domain_regression");
  train_cmd->add_option("--k", train_k, "inner-product order");
  train_cmd->add_option("--n", train_n, "degree bound");
  train_cmd->add_option("--gamma", train_gamma, "obstacle parameter");
  train_cmd->add_option("--alpha", train_alpha, "penalty coefficient");
  train_cmd->add_option("--model-out", train_model_out, "model output path");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "run the full experiment protocol and write metrics.csv");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "closed-loop metrics of a saved model against a reference grid");
  std::string eval_model;
  std::string eval_grid = "32x32";
  double eval_gamma = 1e-3;
  eval_cmd->add_option("--model", eval_model, "model file")->required();
  eval_cmd->add_option("--grid", eval_grid, "grid spec");
  eval_cmd->add_option("--gamma", eval_gamma, "obstacle parameter");

  // levelsets
  auto* level_cmd = app.add_subcommand("levelsets", "export x,y,value samples of V or of a model's rollout cost");
  std::string level_field = "reference";
  std::string level_grid = "64x64";
  std::string level_model;
  std::string level_out = "levelsets.csv";
  double level_gamma = 1e-3;
  level_cmd->add_option("--field", level_field, "reference | rollout");
  level_cmd->add_option("--grid", level_grid, "grid spec");
  level_cmd->add_option("--model", level_model, "model file (rollout field)");
  level_cmd->add_option("--gamma", level_gamma, "obstacle parameter");
  level_cmd->add_option("--output", level_out, "output CSV path");

  // grad-check
  auto* grad_cmd = app.add_subcommand("grad-check", "compare adjoint gradients with finite differences");
  int grad_pairs = 5, grad_n = 10;
  unsigned grad_seed = 2024;
  double grad_gamma = 0.0;
  grad_cmd->add_option("--pairs", grad_pairs, "number of random (theta, y0) pairs");
  grad_cmd->add_option("--n", grad_n, "degree bound");
  grad_cmd->add_option("--seed", grad_seed, "random seed");
  grad_cmd->add_option("--gamma", grad_gamma, "obstacle parameter");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(ref_cmd)) {
      ofl::ExperimentConfig e = load_experiment(global, ref_cmd);
      const auto grid_spec = ofl::parse_grid_spec(ref_grid);
      const auto grid = ofl::cell_centered_grid(e.omega, grid_spec);
      std::vector<double> gammas = ref_gammas.empty() ? e.gamma_list : ref_gammas;
      auto factory = [&e](double g) { return e.problem_for_gamma(g); };
      const auto datasets =
          ofl::generate_datasets(factory, gammas, grid, ofl::grid_tag(grid_spec), e.reference_options(),
                                 std::filesystem::path(e.out_dir) / "ref", e.T, &std::cerr);
      for (const auto& ds : datasets) {
        std::cout << "gamma=" << ofl::gamma_tag(ds.gamma) << ": " << ds.points.size() << " points, "
                  << ds.converged_count() << " converged\n";
      }
    } else if (app.got_subcommand(train_cmd)) {
      ofl::ExperimentConfig e = load_experiment(global, train_cmd);
      const ofl::ControlProblem problem = e.problem_for_gamma(train_gamma);
      const ofl::Basis basis(ofl::InnerProductOrder{train_k}, ofl::IndexSet::make(e.index_kind, train_n, 2), e.Omega);
      const auto train_pts = ofl::cell_centered_grid(e.omega, e.train_grid);
      auto factory = [&e](double g) { return e.problem_for_gamma(g); };
      const auto datasets =
          ofl::generate_datasets(factory, {train_gamma}, train_pts, ofl::grid_tag(e.train_grid),
                                 e.reference_options(), std::filesystem::path(e.out_dir) / "ref", e.T, &std::cerr);
      ofl::Setting setting{&basis, train_alpha, e.T};
      ofl::TrainConfig tc;
      tc.method = ofl::method_from_string(train_method);
      tc.bb_window = e.bb_window;
      tc.tol = e.tol;
      tc.kappa = e.kappa;
      tc.xi = e.xi;
      tc.max_iters = e.max_iters;
      tc.dt = e.dt;
      tc.training_points = train_pts;
      const ofl::TrainRun run = ofl::train(tc, setting, problem, &datasets.front(), &std::cerr);
      std::ofstream os(train_model_out);
      ofl::save_basis(os, basis, run.theta_star,
                      {{"method", train_method},
                       {"gamma", ofl::gamma_tag(train_gamma)},
                       {"alpha", ofl::format_double(train_alpha, "%g")},
                       {"T", ofl::format_double(e.T, "%g")},
                       {"iters", std::to_string(run.iters)},
                       {"final_objective", ofl::format_double(run.final_objective, "%.17g")}});
      const ofl::SplitMetrics metrics = ofl::evaluate_model(problem, basis, run.theta_star, datasets.front(), e.T, e.dt);
      std::cout << "iters=" << run.iters << " converged=" << (run.converged ? "yes" : "no")
                << " objective=" << run.final_objective << " nmae_train=" << metrics.nmae
                << " nmrse_train=" << metrics.nmrse << "\nmodel written to " << train_model_out << "\n";
    } else if (app.got_subcommand(sweep_cmd)) {
      ofl::ExperimentConfig e = load_experiment(global, sweep_cmd);
      const auto rows = ofl::run_sweep(e, &std::cerr);
      std::cout << "wrote " << rows.size() << " metric rows to " << e.out_dir << "/metrics.csv\n";
    } else if (app.got_subcommand(eval_cmd)) {
      ofl::ExperimentConfig e = load_experiment(global, eval_cmd);
      std::ifstream ms(eval_model);
      if (!ms) throw std::runtime_error("cannot open model file " + eval_model);
      ofl::BasisFile bf = ofl::load_basis(ms);
      const auto grid_spec = ofl::parse_grid_spec(eval_grid);
      const auto grid = ofl::cell_centered_grid(e.omega, grid_spec);
      auto factory = [&e](double g) { return e.problem_for_gamma(g); };
      const auto datasets =
          ofl::generate_datasets(factory, {eval_gamma}, grid, ofl::grid_tag(grid_spec), e.reference_options(),
                                 std::filesystem::path(e.out_dir) / "ref", e.T, &std::cerr);
      const ofl::ControlProblem problem = e.problem_for_gamma(eval_gamma);
      const ofl::SplitMetrics metrics =
          ofl::evaluate_model(problem, bf.basis, bf.theta, datasets.front(), e.T, e.dt);
      std::cout << "points=" << metrics.points << " nmae_v=" << metrics.nmae << " nmrse_c=" << metrics.nmrse
                << " escapes=" << metrics.escapes << "\n";
    } else if (app.got_subcommand(level_cmd)) {
      ofl::ExperimentConfig e = load_experiment(global, level_cmd);
      const auto grid_spec = ofl::parse_grid_spec(level_grid);
      std::ofstream os(level_out);
      if (level_field == "reference") {
        ofl::export_levelsets_reference(e, level_gamma, grid_spec, os, &std::cerr);
      } else if (level_field == "rollout") {
        std::ifstream ms(level_model);
        if (!ms) throw std::runtime_error("cannot open model file " + level_model);
        ofl::BasisFile bf = ofl::load_basis(ms);
        ofl::export_levelsets_rollout(e, level_gamma, bf.basis, bf.theta, grid_spec, os);
      } else {
        throw std::runtime_error("unknown field: " + level_field);
      }
      std::cout << "wrote " << level_out << "\n";
    } else if (app.got_subcommand(grad_cmd)) {
      ofl::ExperimentConfig e = load_experiment(global, grad_cmd);
      const ofl::ControlProblem problem = e.problem_for_gamma(grad_gamma);
      const ofl::Basis basis(ofl::InnerProductOrder{1}, ofl::IndexSet::make(e.index_kind, grad_n, 2), e.Omega);
      const bool pass = ofl::grad_check_report(problem, basis, e.T, e.dt, grad_pairs, grad_seed, std::cout);
      std::cout << (pass ? "grad-check: PASS" : "grad-check: FAIL") << "\n";
      return pass ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
