#pragma once

// CSV serialization with fixed column orders. Reruns with the same seed
// produce byte-identical files: timings never appear in file bodies.
//
// Trajectory CSV columns (n = state dim, m = input dim):
//   step, x_0..x_{n-1}, s0_0..s0_{n-1}, u_0..u_{m-1}, w_0..w_{n-1},
//   stage_cost, eta_lo_0..eta_lo_{n-1}, eta_hi_0..eta_hi_{n-1},
//   status, fallback, violation
// status is one of optimal|infeasible|numerical-failure.
//
// Campaign summary CSV columns:
//   controller, runs, steps, mean_cost, median_cost, std_cost,
//   violation_rate, infeasible_steps, fallback_steps, aborts

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "modr/sim.hpp"

namespace modr::csv {

namespace detail {
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}
inline const char* status_name(mpc::StepStatus s) {
  switch (s) {
    case mpc::StepStatus::Optimal: return "optimal";
    case mpc::StepStatus::Infeasible: return "infeasible";
    case mpc::StepStatus::NumericalFailure: return "numerical-failure";
  }
  return "?";
}
}  // namespace detail

inline std::string trajectory_csv(const sim::TrajectoryLog& log, int state_dim, int input_dim) {
  std::ostringstream os;
  os << "step";
  for (int i = 0; i < state_dim; ++i) os << ",x_" << i;
  for (int i = 0; i < state_dim; ++i) os << ",s0_" << i;
  for (int i = 0; i < input_dim; ++i) os << ",u_" << i;
  for (int i = 0; i < state_dim; ++i) os << ",w_" << i;
  os << ",stage_cost";
  for (int i = 0; i < state_dim; ++i) os << ",eta_lo_" << i;
  for (int i = 0; i < state_dim; ++i) os << ",eta_hi_" << i;
  os << ",status,fallback,violation\n";
  for (size_t t = 0; t < log.steps.size(); ++t) {
    const auto& s = log.steps[t];
    os << t;
    auto emit = [&](const Eigen::VectorXd& v, int count) {
      for (int i = 0; i < count; ++i) os << "," << (i < v.size() ? detail::num(v[i]) : "");
    };
    emit(s.x, state_dim);
    emit(s.s0, state_dim);
    emit(s.u, input_dim);
    emit(s.w, state_dim);
    os << "," << detail::num(s.stage_cost);
    emit(s.eta_lower, state_dim);
    emit(s.eta_upper, state_dim);
    os << "," << detail::status_name(s.status) << "," << (s.fallback ? 1 : 0) << ","
       << (s.violation ? 1 : 0) << "\n";
  }
  return os.str();
}

inline std::string summary_csv(const sim::CampaignResult& campaign) {
  std::ostringstream os;
  os << "controller,runs,steps,mean_cost,median_cost,std_cost,violation_rate,"
        "infeasible_steps,fallback_steps,aborts\n";
  for (const auto& c : campaign.controllers) {
    os << c.name << "," << campaign.runs << "," << campaign.steps << ","
       << detail::num(c.mean_cost) << "," << detail::num(c.median_cost) << ","
       << detail::num(c.std_cost) << "," << detail::num(c.violation_rate) << ","
       << c.infeasible_steps << "," << c.fallback_steps << "," << c.aborts << "\n";
  }
  return os.str();
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("csv: cannot open " + path);
  f << body;
}

}  // namespace modr::csv
