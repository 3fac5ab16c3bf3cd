#pragma once

// Experiment configuration: JSON (de)serialization and the builtin presets
// "numerical" (double integrator), "numerical-zero" (its disturbance-free
// variant) and "quadrotor" (planar quadrotor), so both case studies run with
// no hand-written config.

#include <Eigen/Core>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "modr/mogp.hpp"
#include "modr/mpc.hpp"
#include "modr/sim.hpp"

namespace modr::config {

struct ExperimentConfig {
  std::string name = "custom";
  mpc::SystemModel system;
  mpc::MPCConfig controller;
  sim::DisturbanceSpec disturbance;

  int training_points = 200;
  std::uint64_t training_seed = 7;
  int training_sweeps = 150;
  mogp::GatingParams gating;
  gp::KernelParams kernel_init;

  int runs = 50;
  int steps = 30;
  std::uint64_t base_seed = 1000;
  Eigen::VectorXd x0;
  std::string output_dir = "out";

  void validate() const {
    system.validate();
    controller.validate(system.state_dim(), system.input_dim());
    disturbance.validate(system.state_dim());
    gating.validate();
    kernel_init.validate();
    if (training_points < 10) throw std::invalid_argument("config: training_points must be >= 10");
    if (runs < 1 || steps < 1) throw std::invalid_argument("config: runs and steps must be >= 1");
    if (x0.size() != system.state_dim()) throw std::invalid_argument("config: x0 dimension mismatch");
    if (!system.state_box.contains(x0, 1e-9))
      throw std::invalid_argument("config: x0 outside the state box");
  }
};

namespace detail {

inline nlohmann::json mat_json(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::RowVectorXd r = m.row(i);
    rows.emplace_back(r.data(), r.data() + r.size());
  }
  return rows;
}
inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
inline Eigen::MatrixXd mat_from(const nlohmann::json& j) {
  auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<size_t>(m.cols()))
      throw std::invalid_argument("config: ragged matrix");
    for (size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}
inline Eigen::VectorXd vec_from(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string kind_name(sim::DisturbanceKind k) { return sim::to_string(k); }
inline sim::DisturbanceKind kind_from(const std::string& s) {
  if (s == "franke") return sim::DisturbanceKind::FrankeMultimodal;
  if (s == "quadrotor-wind") return sim::DisturbanceKind::QuadrotorWind;
  if (s == "zero") return sim::DisturbanceKind::ZeroDisturbance;
  if (s == "custom") return sim::DisturbanceKind::Custom;
  throw std::invalid_argument("config: unknown disturbance kind '" + s + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using namespace detail;
  nlohmann::json j;
  j["version"] = 1;
  j["name"] = c.name;
  j["system"] = {{"a", mat_json(c.system.a)},
                 {"b", mat_json(c.system.b)},
                 {"state_lower", vec_json(c.system.state_box.lower)},
                 {"state_upper", vec_json(c.system.state_box.upper)},
                 {"input_h", mat_json(c.system.input_h)},
                 {"input_h_rhs", vec_json(c.system.input_h_rhs)},
                 {"support_lower", vec_json(c.system.support.lower)},
                 {"support_upper", vec_json(c.system.support.upper)}};
  j["mpc"] = {{"horizon", c.controller.horizon},
              {"q", mat_json(c.controller.q)},
              {"r", mat_json(c.controller.r)},
              {"epsilon", c.controller.epsilon},
              {"mrpi_eps", c.controller.mrpi_eps},
              {"solver_tol", c.controller.solver_tol},
              {"feedback", c.controller.feedback == mpc::FeedbackDesign::Deadbeat ? "deadbeat" : "riccati"}};
  if (c.controller.p.size()) j["mpc"]["p"] = mat_json(c.controller.p);
  j["disturbance"] = {{"kind", kind_name(c.disturbance.kind)},
                      {"sharpness", c.disturbance.sharpness},
                      {"mode_offsets", mat_json(c.disturbance.mode_offsets)},
                      {"noise_scales", vec_json(c.disturbance.noise_scales)}};
  j["training"] = {{"points", c.training_points},
                   {"seed", c.training_seed},
                   {"sweeps", c.training_sweeps},
                   {"gating_width", c.gating.kernel_width},
                   {"concentration", c.gating.concentration},
                   {"lengthscales", vec_json(c.kernel_init.lengthscales)},
                   {"signal_variance", c.kernel_init.signal_variance},
                   {"noise_variance", c.kernel_init.noise_variance}};
  j["campaign"] = {{"runs", c.runs},
                   {"steps", c.steps},
                   {"base_seed", c.base_seed},
                   {"x0", vec_json(c.x0)}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using namespace detail;
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::invalid_argument("config: unsupported version");
  ExperimentConfig c;
  c.name = j.value("name", std::string("custom"));
  const auto& js = j.at("system");
  c.system.a = mat_from(js.at("a"));
  c.system.b = mat_from(js.at("b"));
  c.system.state_box = geometry::Box(vec_from(js.at("state_lower")), vec_from(js.at("state_upper")));
  c.system.input_h = mat_from(js.at("input_h"));
  c.system.input_h_rhs = vec_from(js.at("input_h_rhs"));
  c.system.support = geometry::Box(vec_from(js.at("support_lower")), vec_from(js.at("support_upper")));
  const auto& jm = j.at("mpc");
  c.controller.horizon = jm.at("horizon").get<int>();
  c.controller.q = mat_from(jm.at("q"));
  c.controller.r = mat_from(jm.at("r"));
  c.controller.epsilon = jm.at("epsilon").get<double>();
  c.controller.mrpi_eps = jm.at("mrpi_eps").get<double>();
  c.controller.solver_tol = jm.at("solver_tol").get<double>();
  const std::string fb = jm.value("feedback", std::string("riccati"));
  if (fb == "deadbeat")
    c.controller.feedback = mpc::FeedbackDesign::Deadbeat;
  else if (fb == "riccati")
    c.controller.feedback = mpc::FeedbackDesign::Riccati;
  else
    throw std::invalid_argument("config: unknown feedback design '" + fb + "'");
  if (jm.contains("p")) c.controller.p = mat_from(jm.at("p"));
  const auto& jd = j.at("disturbance");
  c.disturbance.kind = kind_from(jd.at("kind").get<std::string>());
  c.disturbance.sharpness = jd.at("sharpness").get<double>();
  c.disturbance.mode_offsets = mat_from(jd.at("mode_offsets"));
  c.disturbance.noise_scales = vec_from(jd.at("noise_scales"));
  c.disturbance.support = c.system.support;
  c.disturbance.normalization = c.system.state_box;
  const auto& jt = j.at("training");
  c.training_points = jt.at("points").get<int>();
  c.training_seed = jt.at("seed").get<std::uint64_t>();
  c.training_sweeps = jt.at("sweeps").get<int>();
  c.gating.kernel_width = jt.at("gating_width").get<double>();
  c.gating.concentration = jt.at("concentration").get<double>();
  c.kernel_init.lengthscales = vec_from(jt.at("lengthscales"));
  c.kernel_init.signal_variance = jt.at("signal_variance").get<double>();
  c.kernel_init.noise_variance = jt.at("noise_variance").get<double>();
  const auto& jc = j.at("campaign");
  c.runs = jc.at("runs").get<int>();
  c.steps = jc.at("steps").get<int>();
  c.base_seed = jc.at("base_seed").get<std::uint64_t>();
  c.x0 = vec_from(jc.at("x0"));
  c.output_dir = j.value("output_dir", std::string("out"));
  return c;
}

// ---------------------------------------------------------------------------
// Builtin presets.

inline ExperimentConfig preset_numerical() {
  ExperimentConfig c;
  c.name = "numerical";
  c.system.a.resize(2, 2);
  c.system.a << 1, 1, 0, 1;
  c.system.b.resize(2, 1);
  c.system.b << 0.5, 1;
  Eigen::VectorXd xl(2), xh(2);
  xl << -7, -3;
  xh << 0, 2;
  c.system.state_box = geometry::Box(xl, xh);
  c.system.input_h.resize(2, 1);
  c.system.input_h << 1, -1;
  c.system.input_h_rhs = Eigen::VectorXd::Constant(2, 5.0);
  c.system.support = geometry::Box(Eigen::VectorXd::Constant(2, -0.65), Eigen::VectorXd::Constant(2, 0.65));

  c.controller.horizon = 10;
  c.controller.q = Eigen::MatrixXd::Identity(2, 2);
  c.controller.r = Eigen::MatrixXd::Constant(1, 1, 0.1);
  c.controller.epsilon = 0.2;
  c.controller.mrpi_eps = 1e-2;
  c.controller.feedback = mpc::FeedbackDesign::Deadbeat;

  c.disturbance.kind = sim::DisturbanceKind::FrankeMultimodal;
  c.disturbance.support = c.system.support;
  c.disturbance.normalization = c.system.state_box;
  c.disturbance.mode_offsets.resize(2, 4);
  c.disturbance.mode_offsets << 0.42, -0.35, 0.05, -0.15,
                                0.15,  0.30, -0.12, -0.35;
  c.disturbance.noise_scales = Eigen::VectorXd::Constant(4, 0.05);
  c.disturbance.sharpness = 18.0;

  c.training_points = 200;
  c.training_seed = 7;
  c.training_sweeps = 150;
  c.gating.kernel_width = 1.5;
  c.gating.concentration = 1.0;
  c.kernel_init = gp::KernelParams::iso(2, 2.5, 0.1, 0.01);

  c.runs = 50;
  c.steps = 30;
  c.base_seed = 1000;
  c.x0.resize(2);
  c.x0 << -5, -2;
  c.output_dir = "out/numerical";
  return c;
}

inline ExperimentConfig preset_numerical_zero() {
  ExperimentConfig c = preset_numerical();
  c.name = "numerical-zero";
  c.system.support = geometry::Box::zero(2);
  c.disturbance.kind = sim::DisturbanceKind::ZeroDisturbance;
  c.disturbance.support = c.system.support;
  c.disturbance.mode_offsets = Eigen::MatrixXd::Zero(2, 1);
  c.disturbance.noise_scales = Eigen::VectorXd::Zero(1);
  c.kernel_init = gp::KernelParams::iso(2, 2.5, 1e-4, 1e-6);
  c.output_dir = "out/numerical-zero";
  return c;
}

inline ExperimentConfig preset_quadrotor() {
  ExperimentConfig c;
  c.name = "quadrotor";
  const double dt = 1.0, mass = 1.0;
  c.system.a = Eigen::MatrixXd::Identity(4, 4);
  c.system.a(0, 1) = dt;
  c.system.a(2, 3) = dt;
  c.system.b = Eigen::MatrixXd::Zero(4, 2);
  c.system.b(0, 0) = dt * dt / (2 * mass);
  c.system.b(1, 0) = dt / mass;
  c.system.b(2, 1) = dt * dt / (2 * mass);
  c.system.b(3, 1) = dt / mass;
  Eigen::VectorXd xl(4), xh(4);
  xl << -4, -4, -4, -4;
  xh << 18, 4, 18, 4;
  c.system.state_box = geometry::Box(xl, xh);
  c.system.input_h.resize(4, 2);
  c.system.input_h << 1, 0, -1, 0, 0, 1, 0, -1;
  c.system.input_h_rhs = Eigen::VectorXd::Constant(4, 7.0);
  c.system.support = geometry::Box(Eigen::VectorXd::Constant(4, -0.6), Eigen::VectorXd::Constant(4, 0.6));

  c.controller.horizon = 5;
  c.controller.q = Eigen::MatrixXd::Identity(4, 4);
  c.controller.q(1, 1) = 0.25;
  c.controller.q(3, 3) = 0.25;
  c.controller.r = 0.05 * Eigen::MatrixXd::Identity(2, 2);
  c.controller.epsilon = 0.2;
  c.controller.mrpi_eps = 1e-2;
  c.controller.feedback = mpc::FeedbackDesign::Riccati;

  c.disturbance.kind = sim::DisturbanceKind::QuadrotorWind;
  c.disturbance.support = c.system.support;
  c.disturbance.normalization = c.system.state_box;
  c.disturbance.mode_offsets.resize(4, 4);
  c.disturbance.mode_offsets << 0.10, -0.15, 0.05, -0.05,
                                0.42, -0.38, 0.10, -0.15,
                               -0.10,  0.10, 0.15, -0.15,
                                0.38,  0.42, -0.12, -0.30;
  c.disturbance.noise_scales = Eigen::VectorXd::Constant(4, 0.10);
  c.disturbance.sharpness = 18.0;

  c.training_points = 200;
  c.training_seed = 11;
  c.training_sweeps = 150;
  c.gating.kernel_width = 5.0;
  c.gating.concentration = 1.0;
  c.kernel_init = gp::KernelParams::iso(4, 6.0, 0.1, 0.01);

  c.runs = 50;
  c.steps = 30;
  c.base_seed = 2000;
  c.x0.resize(4);
  c.x0 << 10, 0, 10, 0;
  c.output_dir = "out/quadrotor";
  return c;
}

// Loads a preset by name or parses a JSON config file.
inline ExperimentConfig load_config(const std::string& path_or_preset) {
  if (path_or_preset == "numerical") return preset_numerical();
  if (path_or_preset == "numerical-zero") return preset_numerical_zero();
  if (path_or_preset == "quadrotor") return preset_quadrotor();
  std::ifstream f(path_or_preset);
  if (!f) throw std::invalid_argument("config: cannot open '" + path_or_preset + "'");
  nlohmann::json j;
  f >> j;
  return config_from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  f << to_json(c).dump(2) << "\n";
}

}  // namespace modr::config
