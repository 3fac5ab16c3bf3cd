#pragma once

// Closed-loop simulation harness: Franke-gated multimodal disturbance
// generators, training-data collection, closed-loop rollouts with the tube
// controller, baseline construction, and paired-seed campaigns.

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "modr/geometry.hpp"
#include "modr/mogp.hpp"
#include "modr/mpc.hpp"
#include "modr/rng.hpp"

namespace modr::sim {

// The standard four-term Franke surface on the unit square.
inline Eigen::Vector4d franke_terms(double x, double y) {
  Eigen::Vector4d t;
  t[0] = 0.75 * std::exp(-(std::pow(9 * x - 2, 2) + std::pow(9 * y - 2, 2)) / 4.0);
  t[1] = 0.75 * std::exp(-std::pow(9 * x + 1, 2) / 49.0 - (9 * y + 1) / 10.0);
  t[2] = 0.5 * std::exp(-(std::pow(9 * x - 7, 2) + std::pow(9 * y - 3, 2)) / 4.0);
  t[3] = -0.2 * std::exp(-std::pow(9 * x - 4, 2) - std::pow(9 * y - 7, 2));
  return t;
}

inline double franke(double x, double y) { return franke_terms(x, y).sum(); }

enum class DisturbanceKind { FrankeMultimodal, QuadrotorWind, ZeroDisturbance, Custom };

inline const char* to_string(DisturbanceKind k) {
  switch (k) {
    case DisturbanceKind::FrankeMultimodal: return "franke";
    case DisturbanceKind::QuadrotorWind: return "quadrotor-wind";
    case DisturbanceKind::ZeroDisturbance: return "zero";
    case DisturbanceKind::Custom: return "custom";
  }
  return "?";
}

struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::ZeroDisturbance;
  geometry::Box support;        // disturbances always land inside this box
  geometry::Box normalization;  // state box used to map states onto [0,1]^2
  Eigen::MatrixXd mode_offsets; // n x modes
  Eigen::VectorXd noise_scales; // per mode
  double sharpness = 8.0;
  std::uint64_t seed = 0;

  int modes() const { return static_cast<int>(mode_offsets.cols()); }

  void validate(int n) const {
    if (kind == DisturbanceKind::ZeroDisturbance) return;
    if (support.dim() != n) throw std::invalid_argument("DisturbanceSpec: support dim mismatch");
    if (mode_offsets.rows() != n || mode_offsets.cols() < 1)
      throw std::invalid_argument("DisturbanceSpec: mode offsets shape");
    if (noise_scales.size() != mode_offsets.cols())
      throw std::invalid_argument("DisturbanceSpec: one noise scale per mode");
    for (Eigen::Index j = 0; j < mode_offsets.cols(); ++j)
      if (!support.contains(mode_offsets.col(j), 1e-12))
        throw std::invalid_argument("DisturbanceSpec: mode offset outside support");
  }
};

// Gating probabilities of the mode mixture at state x.
inline Eigen::VectorXd gating_probabilities(const DisturbanceSpec& spec, const Eigen::VectorXd& x) {
  const int m = spec.modes();
  if (spec.kind == DisturbanceKind::Custom)
    return Eigen::VectorXd::Constant(m, 1.0 / m);
  int ax = 0, ay = 1;
  if (spec.kind == DisturbanceKind::QuadrotorWind) {
    ax = 0;  // p_x
    ay = 2;  // p_y
  }
  auto unit = [&](int axis) {
    const double lo = spec.normalization.lower[axis], hi = spec.normalization.upper[axis];
    const double t = (x[axis] - lo) / std::max(hi - lo, 1e-12);
    return std::clamp(t, 0.0, 1.0);
  };
  const Eigen::Vector4d terms = franke_terms(unit(ax), unit(ay));
  Eigen::VectorXd logits(m);
  for (int j = 0; j < m; ++j) logits[j] = spec.sharpness * terms[j % 4];
  const double mx = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - mx).exp();
  return p / p.sum();
}

// Disturbance draw: sample a mode from the Franke-gated categorical, add
// mode noise, resample while outside the support (cap 100) and clip.
inline Eigen::VectorXd sample_disturbance(const DisturbanceSpec& spec, const Eigen::VectorXd& x,
                                          rng::Rng& rng) {
  if (!x.allFinite()) throw std::invalid_argument("sample_disturbance: non-finite state");
  const int n = static_cast<int>(x.size());
  if (spec.kind == DisturbanceKind::ZeroDisturbance) return Eigen::VectorXd::Zero(n);

  const Eigen::VectorXd probs = gating_probabilities(spec, x);
  const int mode = rng.categorical(probs);
  const Eigen::VectorXd base = spec.mode_offsets.col(mode);
  const double scale = spec.noise_scales[mode];
  Eigen::VectorXd w;
  for (int attempt = 0; attempt < 100; ++attempt) {
    w = base + scale * rng.normal_vec(static_cast<int>(base.size()));
    if (spec.support.contains(w, 0.0)) return w;
  }
  for (int i = 0; i < w.size(); ++i) w[i] = std::clamp(w[i], spec.support.lower[i], spec.support.upper[i]);
  if (!spec.support.contains(w, 1e-12))
    throw std::logic_error("sample_disturbance: clipped draw escaped the support box");
  return w;
}

// Uniform states over the state box, one disturbance realization each.
inline mogp::Dataset collect_training_data(const mpc::SystemModel& sys, const DisturbanceSpec& spec,
                                           int n_points, std::uint64_t seed) {
  if (n_points < 1) throw std::invalid_argument("collect_training_data: need n_points >= 1");
  rng::Rng rng(seed);
  const int n = sys.state_dim();
  mogp::Dataset d;
  d.inputs.resize(n_points, n);
  d.outputs.resize(n_points, n);
  for (int i = 0; i < n_points; ++i) {
    for (int j = 0; j < n; ++j)
      d.inputs(i, j) = rng.uniform(sys.state_box.lower[j], sys.state_box.upper[j]);
    d.outputs.row(i) = sample_disturbance(spec, d.inputs.row(i).transpose(), rng).transpose();
  }
  return d;
}

struct StepRecord {
  Eigen::VectorXd x, s0, u, w;
  double objective = std::numeric_limits<double>::quiet_NaN();  // J* of the step problem
  double stage_cost = 0.0;
  Eigen::VectorXd eta_lower, eta_upper;
  mpc::StepStatus status = mpc::StepStatus::NumericalFailure;
  bool fallback = false;
  bool violation = false;  // successor state left the state box
  double wall_ms = 0.0;    // kept out of the CSV bodies
};

struct TrajectoryLog {
  std::vector<StepRecord> steps;
  Eigen::VectorXd final_state;
  std::uint64_t seed = 0;
  double total_cost = 0.0;
  int violations = 0;
  int infeasible_steps = 0;
  int fallback_steps = 0;
  bool feasible_throughout = true;
  bool aborted = false;
  std::string abort_reason;
};

inline TrajectoryLog run_closed_loop(const mpc::ControllerState& ctrl, const DisturbanceSpec& spec,
                                     const Eigen::VectorXd& x0, int steps, std::uint64_t seed) {
  const auto& sys = ctrl.sys;
  if (!sys.state_box.contains(x0, 1e-9))
    throw std::invalid_argument("run_closed_loop: x0 outside the state box");
  spec.validate(sys.state_dim());

  TrajectoryLog log;
  log.seed = seed;
  rng::Rng rng(seed);
  Eigen::VectorXd x = x0;
  mpc::StepSolution prev;
  bool have_prev = false;

  for (int t = 0; t < steps; ++t) {
    StepRecord rec;
    rec.x = x;
    const auto t0 = std::chrono::steady_clock::now();
    mpc::StepSolution sol = mpc::solve_step(ctrl, x);
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rec.status = sol.status;
    rec.objective = sol.objective;
    rec.eta_lower = sol.eta_lower;
    rec.eta_upper = sol.eta_upper;

    Eigen::VectorXd u;
    if (sol.status == mpc::StepStatus::Optimal) {
      u = sol.u;
      rec.s0 = sol.s0;
      prev = sol;
      have_prev = true;
    } else if (sol.status == mpc::StepStatus::Infeasible && have_prev) {
      // shifted-solution fallback; counted against the recursive-feasibility
      // acceptance criterion
      ++log.infeasible_steps;
      ++log.fallback_steps;
      rec.fallback = true;
      log.feasible_throughout = false;
      u = ctrl.k_gain * (x - prev.s.col(1)) + prev.v.col(std::min(1, static_cast<int>(prev.v.cols()) - 1));
      rec.s0 = prev.s.col(1);
      // keep shifting the stale plan forward
      mpc::StepSolution shifted = prev;
      const int N = static_cast<int>(prev.v.cols());
      shifted.s.leftCols(N) = prev.s.rightCols(N);
      shifted.s.col(N) = ctrl.sbar + ctrl.a_cl.a_cl * (prev.s.col(N) - ctrl.sbar);
      if (N > 1) shifted.v.leftCols(N - 1) = prev.v.rightCols(N - 1);
      shifted.v.col(N - 1) = ctrl.vbar + ctrl.k_gain * (prev.s.col(N) - ctrl.sbar);
      prev = shifted;
    } else {
      log.aborted = true;
      log.abort_reason = sol.status == mpc::StepStatus::Infeasible
                             ? "infeasible with no previous solution"
                             : "solver numerical failure";
      if (sol.status == mpc::StepStatus::Infeasible) {
        ++log.infeasible_steps;
        log.feasible_throughout = false;
      }
      log.steps.push_back(std::move(rec));
      break;
    }

    rec.u = u;
    rec.stage_cost = x.dot(ctrl.cfg.q * x) + u.dot(ctrl.cfg.r * u);
    log.total_cost += rec.stage_cost;

    rec.w = sample_disturbance(spec, x, rng);
    x = sys.a * x + sys.b * u + rec.w;
    rec.violation = !sys.state_box.contains(x, 1e-9);
    if (rec.violation) ++log.violations;
    log.steps.push_back(std::move(rec));
  }
  log.final_state = x;
  return log;
}

struct Baselines {
  mpc::ControllerState gp_dr;       // single-expert model, same DR pipeline
  mpc::ControllerState robust_tube; // worst-case tightening, no model
};

inline Baselines build_baselines(const mpc::SystemModel& sys, const mpc::MPCConfig& cfg,
                                 const mogp::Dataset& data, const mogp::GatingParams& gating,
                                 const gp::KernelParams& kernel_init, std::uint64_t seed) {
  Baselines b{
      mpc::setup_controller(sys, cfg,
                            std::make_shared<mogp::MoGPModel>(mogp::train_single_expert(
                                data, sys.support, gating, kernel_init, seed)),
                            true),
      mpc::setup_controller(sys, cfg, nullptr, false)};
  return b;
}

struct CampaignEntry {
  std::string name;
  const mpc::ControllerState* controller = nullptr;
};

struct ControllerSummary {
  std::string name;
  std::vector<TrajectoryLog> runs;
  double mean_cost = 0.0, median_cost = 0.0, std_cost = 0.0;
  double violation_rate = 0.0;
  int infeasible_steps = 0, fallback_steps = 0, aborts = 0;
  double mean_solve_ms = 0.0;
};

struct CampaignResult {
  std::vector<ControllerSummary> controllers;
  int runs = 0, steps = 0;
  std::uint64_t base_seed = 0;
};

// Paired comparison under common random numbers: run r draws its disturbance
// stream from base_seed + r for every controller.
inline CampaignResult run_campaign(const std::vector<CampaignEntry>& entries,
                                   const DisturbanceSpec& spec, const Eigen::VectorXd& x0,
                                   int steps, int n_runs, std::uint64_t base_seed,
                                   int max_threads = 0) {
  if (n_runs < 1) throw std::invalid_argument("run_campaign: need n_runs >= 1");
  CampaignResult result;
  result.runs = n_runs;
  result.steps = steps;
  result.base_seed = base_seed;

  for (const auto& entry : entries) {
    ControllerSummary summary;
    summary.name = entry.name;
    summary.runs.resize(static_cast<size_t>(n_runs));

    const unsigned hw = std::thread::hardware_concurrency();
    int nthreads = max_threads > 0 ? max_threads : static_cast<int>(hw ? hw : 1);
    nthreads = std::min(nthreads, n_runs);
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= n_runs) return;
        summary.runs[static_cast<size_t>(r)] =
            run_closed_loop(*entry.controller, spec, x0, steps, base_seed + static_cast<std::uint64_t>(r));
      }
    };
    if (nthreads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }

    std::vector<double> costs;
    long violations = 0, recorded_steps = 0, solves = 0;
    double wall = 0.0;
    for (const auto& run : summary.runs) {
      costs.push_back(run.total_cost);
      violations += run.violations;
      recorded_steps += static_cast<long>(run.steps.size());
      summary.infeasible_steps += run.infeasible_steps;
      summary.fallback_steps += run.fallback_steps;
      summary.aborts += run.aborted ? 1 : 0;
      for (const auto& st : run.steps) {
        wall += st.wall_ms;
        ++solves;
      }
    }
    summary.mean_cost = std::accumulate(costs.begin(), costs.end(), 0.0) / costs.size();
    std::vector<double> sorted = costs;
    std::sort(sorted.begin(), sorted.end());
    summary.median_cost = sorted[sorted.size() / 2];
    double var = 0.0;
    for (double c : costs) var += (c - summary.mean_cost) * (c - summary.mean_cost);
    summary.std_cost = std::sqrt(var / costs.size());
    summary.violation_rate = recorded_steps ? static_cast<double>(violations) / recorded_steps : 0.0;
    summary.mean_solve_ms = solves ? wall / solves : 0.0;
    result.controllers.push_back(std::move(summary));
  }
  return result;
}

}  // namespace modr::sim
