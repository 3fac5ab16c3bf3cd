// Command-line front end: train disturbance models, run closed-loop
// campaigns, compare the controller against its two baselines, and
// cross-check the CVaR cone program against the discretized primal oracle.
//
// Exit codes: 0 ok, 1 infeasible steps occurred, 2 configuration error,
// 3 training failure, 4 solver numerical failure, 5 oracle gap violation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "modr/config.hpp"
#include "modr/csv.hpp"
#include "modr/drcvar.hpp"
#include "modr/drcvar_oracle.hpp"
#include "modr/mogp.hpp"
#include "modr/mpc.hpp"
#include "modr/rng.hpp"
#include "modr/sim.hpp"
#include "modr/svg.hpp"

namespace {

namespace fs = std::filesystem;
using namespace modr;

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitSolver = 4;
constexpr int kExitOracleGap = 5;

struct CommonOpts {
  std::string config;
  std::string out;
  int runs = -1;
  int steps = -1;
  long long seed = -1;
};

config::ExperimentConfig load_and_validate(const CommonOpts& opts) {
  config::ExperimentConfig cfg = config::load_config(opts.config);
  if (!opts.out.empty()) cfg.output_dir = opts.out;
  if (opts.runs > 0) cfg.runs = opts.runs;
  if (opts.steps > 0) cfg.steps = opts.steps;
  if (opts.seed >= 0) cfg.base_seed = static_cast<std::uint64_t>(opts.seed);
  cfg.validate();
  return cfg;
}

mogp::MoGPModel train_model(const config::ExperimentConfig& cfg, bool single_expert) {
  const mogp::Dataset data =
      sim::collect_training_data(cfg.system, cfg.disturbance, cfg.training_points, cfg.training_seed);
  if (single_expert)
    return mogp::train_single_expert(data, cfg.system.support, cfg.gating, cfg.kernel_init,
                                     cfg.training_seed);
  return mogp::train_mogp(data, cfg.system.support, cfg.gating, cfg.kernel_init, cfg.training_seed,
                          cfg.training_sweeps);
}

void report_model(const mogp::MoGPModel& model) {
  for (size_t d = 0; d < model.dims.size(); ++d)
    std::printf("dimension %zu: %d expert(s)\n", d, static_cast<int>(model.dims[d].experts.size()));
  for (const auto& w : model.warnings) std::printf("warning: %s\n", w.c_str());
}

int write_campaign_outputs(const config::ExperimentConfig& cfg, const sim::CampaignResult& result) {
  fs::create_directories(cfg.output_dir);
  csv::write_file(cfg.output_dir + "/summary.csv", csv::summary_csv(result));
  for (const auto& ctrl : result.controllers) {
    const fs::path dir = fs::path(cfg.output_dir) / ctrl.name;
    fs::create_directories(dir);
    for (size_t r = 0; r < ctrl.runs.size(); ++r) {
      char name[32];
      std::snprintf(name, sizeof(name), "run_%03zu.csv", r);
      csv::write_file((dir / name).string(),
                      csv::trajectory_csv(ctrl.runs[r], cfg.system.state_dim(), cfg.system.input_dim()));
    }
  }
  int infeasible = 0, aborts = 0;
  for (const auto& c : result.controllers) {
    infeasible += c.infeasible_steps;
    aborts += c.aborts;
  }
  std::printf("\n%-12s %10s %10s %10s %9s %6s %6s %9s\n", "controller", "mean", "median", "std",
              "viol.rate", "infeas", "fallbk", "solve[ms]");
  for (const auto& c : result.controllers)
    std::printf("%-12s %10.3f %10.3f %10.3f %9.4f %6d %6d %9.2f\n", c.name.c_str(), c.mean_cost,
                c.median_cost, c.std_cost, c.violation_rate, c.infeasible_steps, c.fallback_steps,
                c.mean_solve_ms);
  for (const auto& c : result.controllers) {
    for (const auto& run : c.runs)
      if (run.aborted && run.abort_reason == "solver numerical failure") return kExitSolver;
  }
  if (aborts > 0 || infeasible > 0) return kExitInfeasible;
  return kExitOk;
}

void emit_plots(const config::ExperimentConfig& cfg, const sim::CampaignResult& result) {
  const std::vector<std::string> palette{"#1a6fb5", "#d07a1f", "#3d9142"};
  // per-run closed-loop cost (paired seeds)
  std::vector<svg::Series> cost_series;
  for (size_t c = 0; c < result.controllers.size(); ++c) {
    svg::Series s;
    s.name = result.controllers[c].name;
    s.color = palette[c % palette.size()];
    for (size_t r = 0; r < result.controllers[c].runs.size(); ++r)
      s.points.emplace_back(static_cast<double>(r), result.controllers[c].runs[r].total_cost);
    cost_series.push_back(std::move(s));
  }
  svg::write_file(cfg.output_dir + "/cost_comparison.svg",
                  svg::render("Closed-loop cost per disturbance realization", "run index",
                              "closed-loop cost", cost_series));

  // planar trajectories with the constraint box
  int ax = 0, ay = 1;
  std::string xl = "x_1", yl = "x_2";
  if (cfg.disturbance.kind == sim::DisturbanceKind::QuadrotorWind) {
    ax = 0;
    ay = 2;
    xl = "p_x";
    yl = "p_y";
  }
  std::vector<svg::Series> traj_series;
  for (size_t c = 0; c < result.controllers.size(); ++c) {
    const auto& ctrl = result.controllers[c];
    const size_t show = std::min<size_t>(ctrl.runs.size(), 30);
    for (size_t r = 0; r < show; ++r) {
      svg::Series s;
      s.name = (r == 0) ? ctrl.name : "";
      s.color = palette[c % palette.size()];
      for (const auto& step : ctrl.runs[r].steps)
        if (step.x.size()) s.points.emplace_back(step.x[ax], step.x[ay]);
      if (ctrl.runs[r].final_state.size())
        s.points.emplace_back(ctrl.runs[r].final_state[ax], ctrl.runs[r].final_state[ay]);
      traj_series.push_back(std::move(s));
    }
  }
  std::vector<svg::RectOverlay> rects{{cfg.system.state_box.lower[ax], cfg.system.state_box.lower[ay],
                                       cfg.system.state_box.upper[ax], cfg.system.state_box.upper[ay],
                                       "#888888", "state constraints"}};
  svg::write_file(cfg.output_dir + "/trajectories.svg",
                  svg::render("Closed-loop trajectories", xl, yl, traj_series, rects));
}

int cmd_train(const CommonOpts& opts, const std::string& model_out) {
  config::ExperimentConfig cfg = load_and_validate(opts);
  mogp::MoGPModel model;
  try {
    model = train_model(cfg, false);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return kExitTraining;
  }
  fs::create_directories(cfg.output_dir);
  const std::string path = model_out.empty() ? cfg.output_dir + "/model.json" : model_out;
  mogp::save_model(model, path);
  std::printf("model written to %s\n", path.c_str());
  report_model(model);
  return kExitOk;
}

int cmd_simulate(const CommonOpts& opts, const std::string& controller, const std::string& model_path) {
  config::ExperimentConfig cfg = load_and_validate(opts);
  std::shared_ptr<const mogp::MoGPModel> model;
  bool use_drcvar = true;
  if (controller == "robust-tube") {
    use_drcvar = false;
  } else if (controller == "mogp-dr" || controller == "gp-dr") {
    if (!model_path.empty())
      model = std::make_shared<mogp::MoGPModel>(mogp::load_model(model_path));
    else
      model = std::make_shared<mogp::MoGPModel>(train_model(cfg, controller == "gp-dr"));
  } else {
    std::fprintf(stderr, "unknown controller '%s'; valid names: mogp-dr, gp-dr, robust-tube\n",
                 controller.c_str());
    return kExitConfig;
  }

  mpc::ControllerState ctrl;
  try {
    ctrl = mpc::setup_controller(cfg.system, cfg.controller, model, use_drcvar);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "controller setup failed: %s\n", e.what());
    return kExitConfig;
  }
  std::vector<sim::CampaignEntry> entries{{controller, &ctrl}};
  const auto result =
      sim::run_campaign(entries, cfg.disturbance, cfg.x0, cfg.steps, cfg.runs, cfg.base_seed);
  return write_campaign_outputs(cfg, result);
}

int cmd_compare(const CommonOpts& opts) {
  config::ExperimentConfig cfg = load_and_validate(opts);
  const mogp::Dataset data =
      sim::collect_training_data(cfg.system, cfg.disturbance, cfg.training_points, cfg.training_seed);
  std::shared_ptr<const mogp::MoGPModel> mogp_model, gp_model;
  try {
    mogp_model = std::make_shared<mogp::MoGPModel>(mogp::train_mogp(
        data, cfg.system.support, cfg.gating, cfg.kernel_init, cfg.training_seed, cfg.training_sweeps));
    gp_model = std::make_shared<mogp::MoGPModel>(mogp::train_single_expert(
        data, cfg.system.support, cfg.gating, cfg.kernel_init, cfg.training_seed));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return kExitTraining;
  }
  std::printf("mogp-dr model:\n");
  report_model(*mogp_model);

  mpc::ControllerState mogp_ctrl, gp_ctrl, robust_ctrl;
  try {
    mogp_ctrl = mpc::setup_controller(cfg.system, cfg.controller, mogp_model, true);
    gp_ctrl = mpc::setup_controller(cfg.system, cfg.controller, gp_model, true);
    robust_ctrl = mpc::setup_controller(cfg.system, cfg.controller, nullptr, false);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "controller setup failed: %s\n", e.what());
    return kExitConfig;
  }

  std::vector<sim::CampaignEntry> entries{
      {"mogp-dr", &mogp_ctrl}, {"gp-dr", &gp_ctrl}, {"robust-tube", &robust_ctrl}};
  const auto result =
      sim::run_campaign(entries, cfg.disturbance, cfg.x0, cfg.steps, cfg.runs, cfg.base_seed);
  const int code = write_campaign_outputs(cfg, result);
  emit_plots(cfg, result);

  const double mogp_cost = result.controllers[0].mean_cost;
  for (size_t c = 1; c < result.controllers.size(); ++c) {
    const double other = result.controllers[c].mean_cost;
    std::printf("mean-cost reduction vs %-12s: %6.2f%%\n", result.controllers[c].name.c_str(),
                100.0 * (other - mogp_cost) / other);
  }
  std::printf("plots: %s/cost_comparison.svg, %s/trajectories.svg\n", cfg.output_dir.c_str(),
              cfg.output_dir.c_str());
  return code;
}

int cmd_oracle_check(int instances, std::uint64_t seed, int grid) {
  rng::Rng rng(seed);
  const double epses[] = {0.05, 0.1, 0.2, 0.5};
  double max_rel = 0.0;
  int worst = -1;
  drcvar::AmbiguitySet worst_set;
  double worst_eps = 0.0;
  for (int t = 0; t < instances; ++t) {
    drcvar::AmbiguitySet set;
    set.support_lo = rng.uniform(-1.0, -0.2);
    set.support_hi = rng.uniform(0.2, 1.0);
    const int m = 1 + static_cast<int>(rng.uniform() * 4);
    Eigen::VectorXd w(m);
    for (int j = 0; j < m; ++j) w[j] = 0.05 + rng.uniform();
    w /= w.sum();
    for (int j = 0; j < m; ++j) {
      const double mu = rng.uniform(set.support_lo * 0.95, set.support_hi * 0.95);
      const double half = std::min(mu - set.support_lo, set.support_hi - mu);
      const double sd =
          std::max(rng.uniform(0.0, 0.6) * std::max(half, 0.05), 0.01 * (set.support_hi - set.support_lo));
      set.components.push_back(drcvar::AmbiguityComponent{w[j], mu, sd * sd});
    }
    const double eps = epses[t % 4];
    try {
      const double dual = drcvar::worst_case_cvar_offset(set, eps);
      const double primal = drcvar::lp_primal_oracle(set, eps, grid);
      const double rel = std::abs(dual - primal) / std::max(1.0, std::abs(primal));
      if (rel > max_rel) {
        max_rel = rel;
        worst = t;
        worst_set = set;
        worst_eps = eps;
      }
    } catch (const std::exception& e) {
      std::fprintf(stderr, "instance %d failed: %s\n", t, e.what());
      std::fprintf(stderr, "support [%g, %g], %d components\n", set.support_lo, set.support_hi, m);
      return kExitSolver;
    }
  }
  std::printf("oracle-check: %d instances, grid %d, max relative gap %.3e\n", instances, grid, max_rel);
  if (max_rel > 1e-3) {
    std::fprintf(stderr, "gap violation at instance %d (seed %llu), eps %g, support [%.17g, %.17g]\n",
                 worst, static_cast<unsigned long long>(seed), worst_eps, worst_set.support_lo,
                 worst_set.support_hi);
    for (const auto& c : worst_set.components)
      std::fprintf(stderr, "  component w %.17g mu %.17g var %.17g\n", c.weight, c.mean, c.variance);
    return kExitOracleGap;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-Gaussian-processes distributionally robust MPC"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string controller, model_path, model_out;
  int instances = 100, grid = 2001;
  long long oracle_seed = 12345;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* c = sub->add_option("--config", opts.config, "config file path or preset name "
                                                       "(numerical | numerical-zero | quadrotor)");
    if (need_config) c->required();
    sub->add_option("--out", opts.out, "output directory override");
    sub->add_option("--runs", opts.runs, "campaign run count override");
    sub->add_option("--steps", opts.steps, "per-run step count override");
    sub->add_option("--seed", opts.seed, "base seed override");
  };

  auto* train = app.add_subcommand("train", "train and serialize the disturbance model");
  add_common(train, true);
  train->add_option("--model-out", model_out, "model file path (default <out>/model.json)");

  auto* simulate = app.add_subcommand("simulate", "closed-loop campaign for one controller");
  add_common(simulate, true);
  simulate->add_option("--controller", controller, "mogp-dr | gp-dr | robust-tube")->required();
  simulate->add_option("--model", model_path, "serialized model file (trained on the fly if absent)");

  auto* compare = app.add_subcommand("compare", "paired-seed comparison of all three controllers");
  add_common(compare, true);

  auto* oracle = app.add_subcommand("oracle-check", "CVaR cone program vs discretized primal oracle");
  oracle->add_option("--instances", instances, "number of random ambiguity sets");
  oracle->add_option("--seed", oracle_seed, "random seed");
  oracle->add_option("--grid", grid, "oracle grid points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(opts, model_out);
    if (simulate->parsed()) return cmd_simulate(opts, controller, model_path);
    if (compare->parsed()) return cmd_compare(opts);
    if (oracle->parsed())
      return cmd_oracle_check(instances, static_cast<std::uint64_t>(oracle_seed), grid);
  } catch (const drcvar::SolverFailure& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return kExitSolver;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitSolver;
  }
  return kExitConfig;
}
