#pragma once

// Tube MPC with a distributionally robust first predicted step. Offline:
// Riccati gain, mRPI tube, tightened constraint sets and terminal set.
// Online: per-dimension CVaR offsets from the mixture prediction at the
// current state, one conic program per step, tube feedback on the applied
// input.
//
// When the origin is not contained in the tightened state set (the
// numerical case study has the state box's upper corner at the origin), the
// terminal ingredients are recentered at the cheapest feasible steady state;
// with a feasible origin this reduces to the standard design.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modr/conic.hpp"
#include "modr/drcvar.hpp"
#include "modr/geometry.hpp"
#include "modr/mogp.hpp"

namespace modr::mpc {

struct SystemModel {
  Eigen::MatrixXd a, b;
  geometry::Box state_box;      // X
  Eigen::MatrixXd input_h;      // U = {u : H u <= h}
  Eigen::VectorXd input_h_rhs;
  geometry::Box support;        // W

  int state_dim() const { return static_cast<int>(a.rows()); }
  int input_dim() const { return static_cast<int>(b.cols()); }

  void validate() const {
    const int n = state_dim(), m = input_dim();
    if (a.cols() != n || b.rows() != n) throw std::invalid_argument("SystemModel: shape mismatch");
    if (state_box.dim() != n || support.dim() != n)
      throw std::invalid_argument("SystemModel: box dimensions mismatch");
    if (input_h.cols() != m || input_h.rows() != input_h_rhs.size())
      throw std::invalid_argument("SystemModel: input polytope mismatch");
  }
};

// Tube feedback gain design. Riccati is the default; Deadbeat places all
// closed-loop poles at zero (single-input systems), which makes the finite
// mRPI sum exact and is the only gain family whose tube fits the numerical
// case study's zero-margin state box.
enum class FeedbackDesign { Riccati, Deadbeat };

struct MPCConfig {
  int horizon = 10;
  Eigen::MatrixXd q, r;
  Eigen::MatrixXd p;  // empty: Lyapunov cost-to-go of the chosen gain
  FeedbackDesign feedback = FeedbackDesign::Riccati;
  double epsilon = 0.2;
  double mrpi_eps = 1e-2;
  double solver_tol = 1e-8;

  void validate(int n, int m) const {
    if (horizon < 2) throw std::invalid_argument("MPCConfig: horizon must be >= 2");
    if (q.rows() != n || q.cols() != n || r.rows() != m || r.cols() != m)
      throw std::invalid_argument("MPCConfig: weight shapes mismatch");
    if (!(epsilon > 0.0) || !(epsilon < 1.0))
      throw std::invalid_argument("MPCConfig: epsilon must be in (0,1)");
    if (!(mrpi_eps > 0.0)) throw std::invalid_argument("MPCConfig: mrpi_eps must be positive");
  }
};

struct RiccatiResult {
  Eigen::MatrixXd p;
  Eigen::MatrixXd k;
  double residual = 0.0;
  int iterations = 0;
};

// Discrete algebraic Riccati equation by fixed-point iteration;
// K = -(R + B'PB)^-1 B'PA.
inline RiccatiResult riccati_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                                  double tol = 1e-12, int max_iters = 200000) {
  RiccatiResult out;
  Eigen::MatrixXd p = q;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd btp = b.transpose() * p;
    Eigen::MatrixXd gain = (r + btp * b).ldlt().solve(btp * a);
    Eigen::MatrixXd pn = q + a.transpose() * p * (a - b * gain);
    const double diff = (pn - p).lpNorm<Eigen::Infinity>();
    p = pn;
    if (diff <= tol * std::max(1.0, p.lpNorm<Eigen::Infinity>())) {
      out.p = p;
      out.k = -(r + b.transpose() * p * b).ldlt().solve(b.transpose() * p * a);
      out.residual = diff;
      out.iterations = it + 1;
      const double rho = geometry::ClosedLoopMatrix(a + b * out.k).spectral_radius;
      if (rho >= 1.0)
        throw std::runtime_error("riccati_gain: closed loop not stable (unstabilizable pair?)");
      return out;
    }
  }
  throw std::runtime_error("riccati_gain: no convergence (unstabilizable pair?)");
}

inline RiccatiResult riccati_gain(const SystemModel& sys, const Eigen::MatrixXd& q,
                                  const Eigen::MatrixXd& r) {
  return riccati_gain(sys.a, sys.b, q, r);
}

// Ackermann deadbeat gain for single-input systems: (A + BK)^n = 0.
inline Eigen::MatrixXd deadbeat_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const int n = static_cast<int>(a.rows());
  if (b.cols() != 1)
    throw std::invalid_argument("deadbeat_gain: only single-input systems supported");
  Eigen::MatrixXd ctrb(n, n);
  Eigen::MatrixXd col = b;
  for (int i = 0; i < n; ++i) {
    ctrb.col(i) = col;
    col = a * col;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(ctrb);
  if (!lu.isInvertible()) throw std::invalid_argument("deadbeat_gain: system not controllable");
  Eigen::MatrixXd apow = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) apow = a * apow;
  Eigen::MatrixXd k = -(lu.inverse().row(n - 1) * apow);
  const double rho = geometry::ClosedLoopMatrix(a + b * k).spectral_radius;
  if (rho >= 1.0) throw std::runtime_error("deadbeat_gain: pole placement failed");
  return k;
}

// P = q_eff + a_cl' P a_cl (discrete Lyapunov); equals the Riccati solution
// when the gain inside q_eff is the LQR gain.
inline Eigen::MatrixXd dlyap(const Eigen::MatrixXd& a_cl, const Eigen::MatrixXd& q_eff,
                             double tol = 1e-13, int max_iters = 100000) {
  Eigen::MatrixXd p = q_eff;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd pn = q_eff + a_cl.transpose() * p * a_cl;
    const double diff = (pn - p).lpNorm<Eigen::Infinity>();
    p = pn;
    if (diff <= tol * std::max(1.0, p.lpNorm<Eigen::Infinity>())) return p;
  }
  throw std::runtime_error("dlyap: no convergence (closed loop unstable?)");
}

struct ControllerState {
  SystemModel sys;
  MPCConfig cfg;
  Eigen::MatrixXd k_gain;
  Eigen::MatrixXd p_term;
  geometry::ClosedLoopMatrix a_cl;
  geometry::MrpiSet tube;        // Z
  geometry::Polytope x_tight;    // X minus Z
  geometry::Polytope u_tight;    // U minus K Z
  geometry::Polytope terminal;   // X_f in state coordinates
  Eigen::VectorXd sbar, vbar;    // terminal setpoint (zero in the standard case)
  std::shared_ptr<const mogp::MoGPModel> model;  // null for the robust baseline
  bool use_drcvar = true;
  Eigen::MatrixXd lq, lr, lp;    // upper-triangular factors: x'Qx = |lq x|^2
};

enum class StepStatus { Optimal, Infeasible, NumericalFailure };

// Tube facet count above which solve_step switches to the lifted-generator
// membership encoding.
inline constexpr Eigen::Index kTubeFacetRowLimit = 400;

struct StepSolution {
  StepStatus status = StepStatus::NumericalFailure;
  Eigen::VectorXd s0;
  Eigen::MatrixXd s;  // n x (N+1)
  Eigen::MatrixXd v;  // m x N
  Eigen::VectorXd u;  // applied input
  Eigen::VectorXd eta_lower, eta_upper;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline Eigen::MatrixXd chol_upper(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) + " must be positive definite");
  return Eigen::MatrixXd(llt.matrixL()).transpose();
}

// cheapest steady state (s, v): A s + B v = s inside the shrunk tightened sets
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> steady_state_target(
    const SystemModel& sys, const Eigen::MatrixXd& q, const geometry::Polytope& x_tight,
    const geometry::Polytope& u_tight, double margin) {
  using conic::LinExpr;
  const int n = sys.state_dim(), m = sys.input_dim();
  conic::ProgramBuilder pb;
  auto sv = pb.new_vars(n);
  auto vv = pb.new_vars(m);
  const int t = pb.new_var();
  pb.minimize(LinExpr::var(t));
  Eigen::MatrixXd lq = chol_upper(q, "Q");
  std::vector<LinExpr> entries;
  for (int i = 0; i < n; ++i) {
    LinExpr e;
    for (int j = 0; j < n; ++j) e.add(sv[static_cast<size_t>(j)], lq(i, j));
    entries.push_back(e);
  }
  pb.add_soc(LinExpr::var(t), entries);
  for (int i = 0; i < n; ++i) {
    LinExpr eq;
    for (int j = 0; j < n; ++j) eq.add(sv[static_cast<size_t>(j)], sys.a(i, j) - (i == j ? 1.0 : 0.0));
    for (int j = 0; j < m; ++j) eq.add(vv[static_cast<size_t>(j)], sys.b(i, j));
    pb.add_eq(eq);
  }
  auto add_rows = [&](const geometry::Polytope& poly, const std::vector<int>& vars) {
    for (Eigen::Index i = 0; i < poly.rows(); ++i) {
      // 1e-9 slack absorbs roundoff when a bound sits exactly on an
      // attainable equilibrium (the numerical case study does this)
      LinExpr row(-(poly.offsets[i] + 1e-9 - margin * std::max(1.0, std::abs(poly.offsets[i]))));
      for (size_t j = 0; j < vars.size(); ++j) row.add(vars[j], poly.normals(i, static_cast<Eigen::Index>(j)));
      pb.add_le(row);
    }
  };
  add_rows(x_tight, sv);
  add_rows(u_tight, vv);
  const auto sol = conic::solve_socp(pb.build(), 1e-9);
  if (sol.status != conic::SolveStatus::Optimal) {
    if (margin > 0.0) return steady_state_target(sys, q, x_tight, u_tight, 0.0);
    throw std::invalid_argument(
        "setup_controller: no feasible steady state inside the tightened sets "
        "(disturbance support too large for the state box)");
  }
  Eigen::VectorXd sbar(n), vbar(m);
  for (int i = 0; i < n; ++i) sbar[i] = sol.x[sv[static_cast<size_t>(i)]];
  for (int i = 0; i < m; ++i) vbar[i] = sol.x[vv[static_cast<size_t>(i)]];
  return {sbar, vbar};
}

}  // namespace detail

inline ControllerState setup_controller(const SystemModel& sys, const MPCConfig& cfg,
                                        std::shared_ptr<const mogp::MoGPModel> model,
                                        bool use_drcvar = true) {
  sys.validate();
  cfg.validate(sys.state_dim(), sys.input_dim());
  if (use_drcvar && !model) throw std::invalid_argument("setup_controller: DR-CVaR mode needs a model");

  ControllerState ctrl;
  ctrl.sys = sys;
  ctrl.cfg = cfg;
  ctrl.model = std::move(model);
  ctrl.use_drcvar = use_drcvar;

  if (cfg.feedback == FeedbackDesign::Riccati) {
    const auto ric = riccati_gain(sys, cfg.q, cfg.r);
    ctrl.k_gain = ric.k;
    ctrl.p_term = cfg.p.size() ? cfg.p : ric.p;
  } else {
    ctrl.k_gain = deadbeat_gain(sys.a, sys.b);
    const Eigen::MatrixXd q_eff =
        cfg.q + ctrl.k_gain.transpose() * cfg.r * ctrl.k_gain;
    ctrl.p_term = cfg.p.size() ? cfg.p : dlyap(sys.a + sys.b * ctrl.k_gain, q_eff);
  }
  ctrl.a_cl = geometry::ClosedLoopMatrix(sys.a + sys.b * ctrl.k_gain);

  ctrl.tube = geometry::mrpi_approx(ctrl.a_cl, sys.support, cfg.mrpi_eps);

  ctrl.x_tight = geometry::pontryagin_diff(sys.state_box, ctrl.tube);
  if (ctrl.x_tight.empty)
    throw std::invalid_argument("setup_controller: tightened state set X - Z is empty");

  // U - K Z, facet-wise via the exact tube support
  {
    Eigen::VectorXd off(sys.input_h.rows());
    for (Eigen::Index i = 0; i < sys.input_h.rows(); ++i) {
      const Eigen::VectorXd d = ctrl.k_gain.transpose() * sys.input_h.row(i).transpose();
      off[i] = sys.input_h_rhs[i] - ctrl.tube.support(d);
    }
    ctrl.u_tight = geometry::Polytope(sys.input_h, off);
    if (!geometry::polytope_nonempty(ctrl.u_tight))
      throw std::invalid_argument("setup_controller: tightened input set U - KZ is empty");
  }

  // terminal setpoint: the origin when feasible, else the cheapest steady state
  const int n = sys.state_dim(), m = sys.input_dim();
  const Eigen::VectorXd zero_s = Eigen::VectorXd::Zero(n), zero_v = Eigen::VectorXd::Zero(m);
  if (ctrl.x_tight.contains(zero_s, 1e-12) && ctrl.u_tight.contains(zero_v, 1e-12)) {
    ctrl.sbar = zero_s;
    ctrl.vbar = zero_v;
  } else {
    std::tie(ctrl.sbar, ctrl.vbar) =
        detail::steady_state_target(sys, cfg.q, ctrl.x_tight, ctrl.u_tight, 1e-3);
  }

  auto term = geometry::terminal_set(ctrl.a_cl, ctrl.k_gain, ctrl.x_tight, ctrl.u_tight,
                                     ctrl.sbar, ctrl.vbar);
  if (!term.converged)
    throw std::runtime_error("setup_controller: terminal set iteration did not converge");
  if (term.set.empty || !geometry::polytope_nonempty(term.set))
    throw std::invalid_argument("setup_controller: terminal set X_f is empty");
  ctrl.terminal = std::move(term.set);

  ctrl.lq = detail::chol_upper(cfg.q, "Q");
  ctrl.lr = detail::chol_upper(cfg.r, "R");
  ctrl.lp = detail::chol_upper(ctrl.p_term, "P");
  return ctrl;
}

namespace detail {

// tube tightening magnitudes per state dimension (for logs and the robust
// first-step constraint): eta_upper = h_W(e_i), eta_lower = h_W(-e_i)
inline void support_offsets(const geometry::Box& w, Eigen::VectorXd& lower, Eigen::VectorXd& upper) {
  const int n = w.dim();
  lower.resize(n);
  upper.resize(n);
  for (int i = 0; i < n; ++i) {
    upper[i] = w.support(Eigen::VectorXd::Unit(n, i));
    lower[i] = w.support(-Eigen::VectorXd::Unit(n, i));
  }
}

}  // namespace detail

inline StepSolution solve_step(const ControllerState& ctrl, const Eigen::VectorXd& x) {
  using conic::LinExpr;
  const int n = ctrl.sys.state_dim(), m = ctrl.sys.input_dim(), N = ctrl.cfg.horizon;

  StepSolution out;
  if (ctrl.use_drcvar) {
    const auto pred = mogp::predict_mixture(*ctrl.model, x);
    const auto offs = drcvar::build_offsets(pred, ctrl.sys.support, ctrl.cfg.epsilon);
    out.eta_lower = offs.eta_lower;
    out.eta_upper = offs.eta_upper;
  } else {
    detail::support_offsets(ctrl.sys.support, out.eta_lower, out.eta_upper);
  }

  conic::ProgramBuilder pb;
  std::vector<std::vector<int>> sv(static_cast<size_t>(N + 1));
  std::vector<std::vector<int>> vv(static_cast<size_t>(N));
  for (auto& col : sv) col = pb.new_vars(n);
  for (auto& col : vv) col = pb.new_vars(m);
  const int t_obj = pb.new_var();
  pb.minimize(LinExpr::var(t_obj));

  // dynamics
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < n; ++i) {
      LinExpr eq = LinExpr::var(sv[static_cast<size_t>(k + 1)][static_cast<size_t>(i)], -1.0);
      for (int j = 0; j < n; ++j) eq.add(sv[static_cast<size_t>(k)][static_cast<size_t>(j)], ctrl.sys.a(i, j));
      for (int j = 0; j < m; ++j) eq.add(vv[static_cast<size_t>(k)][static_cast<size_t>(j)], ctrl.sys.b(i, j));
      pb.add_eq(eq);
    }

  // initial tube membership x - s0 in Z: facet rows while the H-rep stays
  // small, else the exact lifted-generator encoding
  const auto& tube = ctrl.tube;
  if (tube.generators.cols() == 0) {
    for (int i = 0; i < n; ++i) {
      LinExpr eq = LinExpr::var(sv[0][static_cast<size_t>(i)]);
      eq += LinExpr(tube.center[i] - x[i]);
      pb.add_eq(eq);  // s0 = x - center
    }
  } else if (tube.poly.rows() <= kTubeFacetRowLimit) {
    for (Eigen::Index r = 0; r < tube.poly.rows(); ++r) {
      // H (x - s0) <= h  ->  -H s0 <= h - H x
      LinExpr row(tube.poly.normals.row(r).dot(x) - tube.poly.offsets[r]);
      for (int j = 0; j < n; ++j) row.add(sv[0][static_cast<size_t>(j)], -tube.poly.normals(r, j));
      pb.add_le(row);
    }
  } else {
    // lifted generator form: s0 + G xi = x - center, |xi| <= 1
    auto xi = pb.new_vars(static_cast<int>(tube.generators.cols()));
    for (int i = 0; i < n; ++i) {
      LinExpr eq = LinExpr::var(sv[0][static_cast<size_t>(i)]);
      for (size_t g = 0; g < xi.size(); ++g)
        eq.add(xi[g], tube.generators(i, static_cast<Eigen::Index>(g)));
      eq += LinExpr(tube.center[i] - x[i]);
      pb.add_eq(eq);
    }
    for (int g : xi) {
      pb.add_le(LinExpr::var(g) - LinExpr(1.0));
      pb.add_le(LinExpr(-1.0) - LinExpr::var(g));
    }
  }

  // first predicted step
  if (ctrl.use_drcvar) {
    const Eigen::VectorXd acl_x = ctrl.a_cl.a_cl * x;
    for (int i = 0; i < n; ++i) {
      const double ub = ctrl.sys.state_box.upper[i] - out.eta_upper[i];
      const double lb = ctrl.sys.state_box.lower[i] + out.eta_lower[i];
      if (ub < lb - 1e-12) {
        out.status = StepStatus::Infeasible;
        return out;
      }
      LinExpr expr = LinExpr::var(sv[1][static_cast<size_t>(i)]);
      for (int j = 0; j < n; ++j) expr.add(sv[0][static_cast<size_t>(j)], -ctrl.a_cl.a_cl(i, j));
      expr += LinExpr(acl_x[i]);
      LinExpr upper_row = expr;
      upper_row += LinExpr(-ub);
      pb.add_le(upper_row);
      LinExpr lower_row = -expr;
      lower_row += LinExpr(lb);
      pb.add_le(lower_row);
    }
  } else {
    for (Eigen::Index r = 0; r < ctrl.x_tight.rows(); ++r) {
      LinExpr row(-ctrl.x_tight.offsets[r]);
      for (int j = 0; j < n; ++j) row.add(sv[1][static_cast<size_t>(j)], ctrl.x_tight.normals(r, j));
      pb.add_le(row);
    }
  }

  // tightened state constraints k = 2..N-1 (empty range when N = 2)
  for (int k = 2; k <= N - 1; ++k)
    for (Eigen::Index r = 0; r < ctrl.x_tight.rows(); ++r) {
      LinExpr row(-ctrl.x_tight.offsets[r]);
      for (int j = 0; j < n; ++j) row.add(sv[static_cast<size_t>(k)][static_cast<size_t>(j)], ctrl.x_tight.normals(r, j));
      pb.add_le(row);
    }

  // tightened inputs
  for (int k = 0; k < N; ++k)
    for (Eigen::Index r = 0; r < ctrl.u_tight.rows(); ++r) {
      LinExpr row(-ctrl.u_tight.offsets[r]);
      for (int j = 0; j < m; ++j) row.add(vv[static_cast<size_t>(k)][static_cast<size_t>(j)], ctrl.u_tight.normals(r, j));
      pb.add_le(row);
    }

  // terminal set
  for (Eigen::Index r = 0; r < ctrl.terminal.rows(); ++r) {
    LinExpr row(-ctrl.terminal.offsets[r]);
    for (int j = 0; j < n; ++j) row.add(sv[static_cast<size_t>(N)][static_cast<size_t>(j)], ctrl.terminal.normals(r, j));
    pb.add_le(row);
  }

  // quadratic objective as a rotated-cone epigraph:
  // ||((1-t)/2, L_stack z)|| <= (1+t)/2  <=>  z'Mz <= t
  {
    std::vector<LinExpr> entries;
    entries.push_back(LinExpr(0.5) - 0.5 * LinExpr::var(t_obj));
    auto push_block = [&](const Eigen::MatrixXd& lu, const std::vector<int>& vars) {
      for (Eigen::Index i = 0; i < lu.rows(); ++i) {
        LinExpr e;
        for (size_t j = 0; j < vars.size(); ++j) {
          const double c = lu(i, static_cast<Eigen::Index>(j));
          if (c != 0.0) e.add(vars[j], c);
        }
        entries.push_back(e);
      }
    };
    for (int k = 0; k < N; ++k) {
      push_block(ctrl.lq, sv[static_cast<size_t>(k)]);
      push_block(ctrl.lr, vv[static_cast<size_t>(k)]);
    }
    push_block(ctrl.lp, sv[static_cast<size_t>(N)]);
    pb.add_soc(0.5 * LinExpr::var(t_obj) + LinExpr(0.5), entries);
  }

  const auto sol = conic::solve_socp(pb.build(), ctrl.cfg.solver_tol);
  if (sol.status == conic::SolveStatus::Infeasible) {
    out.status = StepStatus::Infeasible;
    return out;
  }
  if (sol.status != conic::SolveStatus::Optimal) {
    out.status = StepStatus::NumericalFailure;
    return out;
  }

  out.status = StepStatus::Optimal;
  out.s.resize(n, N + 1);
  out.v.resize(m, N);
  for (int k = 0; k <= N; ++k)
    for (int i = 0; i < n; ++i) out.s(i, k) = sol.x[sv[static_cast<size_t>(k)][static_cast<size_t>(i)]];
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < m; ++i) out.v(i, k) = sol.x[vv[static_cast<size_t>(k)][static_cast<size_t>(i)]];
  out.s0 = out.s.col(0);
  out.u = ctrl.k_gain * (x - out.s0) + out.v.col(0);

  // objective evaluated at the extracted point (more accurate than the
  // epigraph variable near convergence)
  double j = 0.0;
  for (int k = 0; k < N; ++k) {
    j += (ctrl.lq * out.s.col(k)).squaredNorm();
    j += (ctrl.lr * out.v.col(k)).squaredNorm();
  }
  j += (ctrl.lp * out.s.col(N)).squaredNorm();
  out.objective = j;
  return out;
}

inline Eigen::VectorXd control_law(const StepSolution& sol, const Eigen::VectorXd& x,
                                   const Eigen::MatrixXd& k_gain) {
  if (sol.status != StepStatus::Optimal)
    throw std::logic_error("control_law: called on a non-optimal solution");
  return k_gain * (x - sol.s0) + sol.v.col(0);
}

// ---------------------------------------------------------------------------
// Shifted-candidate audit: the candidate built from the previous optimum must
// satisfy every constraint of the problem at the successor state.

struct CandidateCheck {
  bool feasible = false;
  double max_violation = 0.0;
  std::string worst_constraint;
};

inline CandidateCheck check_shifted_candidate(const ControllerState& ctrl,
                                              const StepSolution& prev,
                                              const Eigen::VectorXd& x_new) {
  const int n = ctrl.sys.state_dim(), N = ctrl.cfg.horizon;
  CandidateCheck res;
  if (prev.status != StepStatus::Optimal) return res;

  Eigen::MatrixXd s(n, N + 1);
  Eigen::MatrixXd v(ctrl.sys.input_dim(), N);
  s.leftCols(N) = prev.s.rightCols(N);
  s.col(N) = ctrl.sbar + ctrl.a_cl.a_cl * (prev.s.col(N) - ctrl.sbar);
  if (N > 1) v.leftCols(N - 1) = prev.v.rightCols(N - 1);
  v.col(N - 1) = ctrl.vbar + ctrl.k_gain * (prev.s.col(N) - ctrl.sbar);

  double worst = -std::numeric_limits<double>::infinity();
  std::string which;
  auto track = [&](double violation, const std::string& name) {
    if (violation > worst) {
      worst = violation;
      which = name;
    }
  };

  // (20a) tube membership
  {
    const Eigen::VectorXd e = x_new - s.col(0);
    double viol;
    if (ctrl.tube.generators.cols() == 0) {
      viol = (e - ctrl.tube.center).lpNorm<Eigen::Infinity>();
    } else {
      viol = ctrl.tube.poly.max_residual(e);
    }
    track(viol, "tube membership (20a)");
  }
  // (20b) dynamics
  for (int k = 0; k < N; ++k) {
    const double viol =
        (s.col(k + 1) - ctrl.sys.a * s.col(k) - ctrl.sys.b * v.col(k)).lpNorm<Eigen::Infinity>();
    track(viol, "dynamics (20b)");
  }
  // (20c) first step with offsets recomputed at x_new
  if (ctrl.use_drcvar) {
    const auto pred = mogp::predict_mixture(*ctrl.model, x_new);
    const auto offs = drcvar::build_offsets(pred, ctrl.sys.support, ctrl.cfg.epsilon);
    const Eigen::VectorXd y = s.col(1) + ctrl.a_cl.a_cl * (x_new - s.col(0));
    for (int i = 0; i < n; ++i) {
      track(y[i] - (ctrl.sys.state_box.upper[i] - offs.eta_upper[i]), "first-step upper (20c)");
      track((ctrl.sys.state_box.lower[i] + offs.eta_lower[i]) - y[i], "first-step lower (20c)");
    }
  } else {
    track(ctrl.x_tight.max_residual(s.col(1)), "first-step tightened state");
  }
  // (20d)
  for (int k = 2; k <= N - 1; ++k) track(ctrl.x_tight.max_residual(s.col(k)), "state (20d)");
  // (20e)
  for (int k = 0; k < N; ++k) track(ctrl.u_tight.max_residual(v.col(k)), "input (20e)");
  // (20f)
  track(ctrl.terminal.max_residual(s.col(N)), "terminal (20f)");

  res.max_violation = worst;
  res.worst_constraint = which;
  res.feasible = worst <= 1e-6;
  return res;
}

}  // namespace modr::mpc
