#include "modr/mpc.hpp"

#include <gtest/gtest.h>

#include <Eigen/LU>

#include "modr/rng.hpp"

using namespace modr;
using namespace modr::mpc;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

// Structure-preserving doubling algorithm, used as an independent DARE oracle.
Eigen::MatrixXd dare_sda(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         const Eigen::MatrixXd& q, const Eigen::MatrixXd& r) {
  Eigen::MatrixXd a_k = a;
  Eigen::MatrixXd g_k = b * r.ldlt().solve(b.transpose());
  Eigen::MatrixXd h_k;
  Eigen::MatrixXd h_k1 = q;
  do {
    h_k = h_k1;
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(h_k.rows(), h_k.cols()) + g_k * h_k;
    auto w_lu = w.partialPivLu();
    Eigen::MatrixXd v1 = w_lu.solve(a_k);
    Eigen::MatrixXd v2 = w_lu.solve(g_k.transpose()).transpose();
    g_k += a_k * v2 * a_k.transpose();
    h_k1 = h_k + v1.transpose() * h_k * a_k;
    a_k *= v1;
  } while ((h_k1 - h_k).norm() > 1e-12 * h_k1.norm());
  return h_k1;
}

// constrained double integrator case study
SystemModel numerical_system(double w_halfwidth = 0.8) {
  SystemModel sys;
  sys.a.resize(2, 2);
  sys.a << 1, 1, 0, 1;
  sys.b.resize(2, 1);
  sys.b << 0.5, 1;
  sys.state_box = geometry::Box(vec2(-7, -3), vec2(0, 2));
  sys.input_h.resize(2, 1);
  sys.input_h << 1, -1;
  sys.input_h_rhs = Eigen::VectorXd::Constant(2, 5.0);
  if (w_halfwidth > 0)
    sys.support = geometry::Box(vec2(-w_halfwidth, -w_halfwidth), vec2(w_halfwidth, w_halfwidth));
  else
    sys.support = geometry::Box::zero(2);
  return sys;
}

MPCConfig numerical_config(bool deadbeat = false) {
  MPCConfig cfg;
  cfg.horizon = 10;
  cfg.q = Eigen::MatrixXd::Identity(2, 2);
  cfg.r = Eigen::MatrixXd::Constant(1, 1, 0.1);
  cfg.epsilon = 0.2;
  if (deadbeat) cfg.feedback = FeedbackDesign::Deadbeat;
  return cfg;
}

// tiny synthetic disturbance model with outputs inside the support
std::shared_ptr<mogp::MoGPModel> toy_model(const SystemModel& sys, std::uint64_t seed,
                                           double scale = 0.1) {
  rng::Rng rng(seed);
  const int n = sys.state_dim();
  mogp::Dataset d;
  const int rows = 40;
  d.inputs.resize(rows, n);
  d.outputs.resize(rows, n);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < n; ++j)
      d.inputs(i, j) = rng.uniform(sys.state_box.lower[j], sys.state_box.upper[j]);
    for (int j = 0; j < n; ++j) {
      double w = scale * rng.normal();
      d.outputs(i, j) = std::clamp(w, sys.support.lower[j], sys.support.upper[j]);
    }
  }
  mogp::GatingParams g;
  g.kernel_width = 2.0;
  g.concentration = 1.0;
  auto m = std::make_shared<mogp::MoGPModel>(train_mogp(
      d, sys.support, g, gp::KernelParams::iso(n, 2.0, 0.05, 0.01), seed, 30));
  return m;
}

std::shared_ptr<mogp::MoGPModel> zero_model(const SystemModel& sys) {
  mogp::Dataset d;
  const int n = sys.state_dim();
  d.inputs = Eigen::MatrixXd::Zero(5, n);
  for (int i = 0; i < 5; ++i) d.inputs(i, 0) = -0.1 * (i + 1);
  d.outputs = Eigen::MatrixXd::Zero(5, n);
  mogp::GatingParams g;
  g.kernel_width = 2.0;
  g.concentration = 1.0;
  return std::make_shared<mogp::MoGPModel>(train_mogp(
      d, sys.support, g, gp::KernelParams::iso(n, 2.0, 1e-4, 1e-6), 1, 5));
}

}  // namespace

TEST(Riccati, TrivialAndGoldenRatio) {
  // a = 0: P = Q, K = 0
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd b(2, 1);
  b << 1, 0.5;
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(1, 1);
  auto res = riccati_gain(a, b, q, r);
  EXPECT_NEAR((res.p - q).lpNorm<Eigen::Infinity>(), 0.0, 1e-10);
  EXPECT_NEAR(res.k.lpNorm<Eigen::Infinity>(), 0.0, 1e-10);

  // scalar a=b=q=r=1: P is the golden ratio, K = -1/P
  Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  auto gold = riccati_gain(one, one, one, one);
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  EXPECT_NEAR(gold.p(0, 0), phi, 1e-10);
  EXPECT_NEAR(gold.k(0, 0), -1.0 / phi, 1e-10);
}

TEST(Riccati, DeadbeatGainIsNilpotent) {
  SystemModel sys = numerical_system(0.8);
  Eigen::MatrixXd k = deadbeat_gain(sys.a, sys.b);
  EXPECT_NEAR(k(0, 0), -1.0, 1e-12);
  EXPECT_NEAR(k(0, 1), -1.5, 1e-12);
  Eigen::MatrixXd acl = sys.a + sys.b * k;
  EXPECT_LE((acl * acl).lpNorm<Eigen::Infinity>(), 1e-12);
  // Lyapunov P equals Riccati P when the gain is the LQR gain
  MPCConfig cfg = numerical_config();
  auto ric = riccati_gain(sys, cfg.q, cfg.r);
  Eigen::MatrixXd q_eff = cfg.q + ric.k.transpose() * cfg.r * ric.k;
  Eigen::MatrixXd p_lyap = dlyap(sys.a + sys.b * ric.k, q_eff);
  EXPECT_LE((p_lyap - ric.p).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Riccati, MatchesDoublingOracle) {
  rng::Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 3, m = 1 + trial % 2;
    Eigen::MatrixXd a(n, n), b(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = 0.6 * rng.normal() / std::sqrt(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) b(i, j) = rng.normal();
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd r = 0.5 * Eigen::MatrixXd::Identity(m, m);
    auto res = riccati_gain(a, b, q, r);
    Eigen::MatrixXd p_oracle = dare_sda(a, b, q, r);
    EXPECT_LE((res.p - p_oracle).lpNorm<Eigen::Infinity>(),
              1e-10 * std::max(1.0, p_oracle.lpNorm<Eigen::Infinity>()));
    // DARE residual
    Eigen::MatrixXd btpb = r + b.transpose() * res.p * b;
    Eigen::MatrixXd resid = a.transpose() * res.p * a - res.p -
                            a.transpose() * res.p * b * btpb.ldlt().solve(b.transpose() * res.p * a) + q;
    EXPECT_LE(resid.lpNorm<Eigen::Infinity>(), 1e-9);
  }
}

TEST(Setup, DisturbanceFreeKeepsOriginalSets) {
  SystemModel sys = numerical_system(0.0);
  auto ctrl = setup_controller(sys, numerical_config(), zero_model(sys), true);
  EXPECT_EQ(ctrl.tube.generators.cols(), 0);
  // tightened sets equal the originals
  EXPECT_NEAR(ctrl.x_tight.offsets[0], 0.0, 1e-12);   // s1 <= 0
  EXPECT_NEAR(ctrl.x_tight.offsets[1], 7.0, 1e-12);   // -s1 <= 7
  EXPECT_NEAR(ctrl.u_tight.offsets[0], 5.0, 1e-12);
  EXPECT_TRUE(ctrl.sbar.isZero(1e-12));
}

TEST(Setup, PaperSystemAllSetsNonempty) {
  SystemModel sys = numerical_system(0.8);
  auto ctrl = setup_controller(sys, numerical_config(true), toy_model(sys, 3), true);
  EXPECT_FALSE(ctrl.x_tight.empty);
  EXPECT_TRUE(geometry::polytope_nonempty(ctrl.u_tight));
  EXPECT_TRUE(geometry::polytope_nonempty(ctrl.terminal));
  // the origin is outside X - Z here, so the terminal set recenters
  EXPECT_LT(ctrl.sbar[0], 0.0);
  EXPECT_TRUE(ctrl.terminal.contains(ctrl.sbar, 1e-8));
  // terminal invariance under the terminal dynamics
  for (Eigen::Index i = 0; i < ctrl.terminal.rows(); ++i) {
    const Eigen::VectorXd d = ctrl.terminal.normals.row(i).transpose();
    geometry::Polytope shifted = ctrl.terminal;
    shifted.offsets = ctrl.terminal.offsets - ctrl.terminal.normals * ctrl.sbar;
    const double sup = geometry::polytope_support(shifted, ctrl.a_cl.a_cl.transpose() * d);
    EXPECT_LE(sup + d.dot(ctrl.sbar), ctrl.terminal.offsets[i] + 1e-7);
  }
}

TEST(Setup, OversizedDisturbanceFailsFast) {
  SystemModel sys = numerical_system(3.0);  // W wider than X
  try {
    setup_controller(sys, numerical_config(true), toy_model(numerical_system(0.8), 3), true);
    FAIL() << "expected a configuration error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("X - Z"), std::string::npos);
  }
}

TEST(SolveStep, OriginIsFixedPointWithoutDisturbance) {
  SystemModel sys = numerical_system(0.0);
  // shift the box so the origin is interior; the unconstrained optimum is 0
  sys.state_box = geometry::Box(vec2(-5, -3), vec2(5, 3));
  auto ctrl = setup_controller(sys, numerical_config(), zero_model(sys), true);
  auto sol = solve_step(ctrl, Eigen::VectorXd::Zero(2));
  ASSERT_EQ(sol.status, StepStatus::Optimal);
  EXPECT_NEAR(sol.u.lpNorm<Eigen::Infinity>(), 0.0, 1e-6);
  EXPECT_NEAR(sol.objective, 0.0, 1e-8);
}

TEST(SolveStep, MatchesBatchLqrWhenConstraintsLoose) {
  SystemModel sys = numerical_system(0.0);
  sys.state_box = geometry::Box(vec2(-100, -100), vec2(100, 100));
  sys.input_h_rhs = Eigen::VectorXd::Constant(2, 100.0);
  MPCConfig cfg = numerical_config();
  auto ctrl = setup_controller(sys, cfg, zero_model(sys), true);

  const Eigen::VectorXd x0 = vec2(0.3, -0.2);
  auto sol = solve_step(ctrl, x0);
  ASSERT_EQ(sol.status, StepStatus::Optimal);

  // batch dense QP oracle: with s0 pinned to x0 (Z = {0}) and no inequality
  // constraints, v* = -(G'QG + R)^-1 G'Q F x0
  const int N = cfg.horizon, n = 2, m = 1;
  Eigen::MatrixXd F(n * N, n);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n * N, m * N);
  Eigen::MatrixXd apow = sys.a;
  for (int k = 0; k < N; ++k) {
    F.middleRows(k * n, n) = apow;
    apow = sys.a * apow;
  }
  for (int k = 0; k < N; ++k)
    for (int j = 0; j <= k; ++j) {
      Eigen::MatrixXd blk = sys.b;
      for (int p = 0; p < k - j; ++p) blk = sys.a * blk;
      G.block(k * n, j * m, n, m) = blk;
    }
  Eigen::MatrixXd qbar = Eigen::MatrixXd::Zero(n * N, n * N);
  for (int k = 0; k < N - 1; ++k) qbar.block(k * n, k * n, n, n) = cfg.q;
  qbar.bottomRightCorner(n, n) = ctrl.p_term;
  Eigen::MatrixXd rbar = Eigen::MatrixXd::Zero(m * N, m * N);
  for (int k = 0; k < N; ++k) rbar.block(k * m, k * m, m, m) = cfg.r;
  Eigen::VectorXd v_star =
      -(G.transpose() * qbar * G + rbar).ldlt().solve(G.transpose() * qbar * F * x0);

  for (int k = 0; k < N; ++k) EXPECT_NEAR(sol.v(0, k), v_star[k], 1e-6);
}

TEST(SolveStep, FarOutsideStateBoxIsInfeasible) {
  SystemModel sys = numerical_system(0.1);
  auto ctrl = setup_controller(sys, numerical_config(), toy_model(sys, 5, 0.02), true);
  auto sol = solve_step(ctrl, vec2(30.0, 30.0));
  EXPECT_EQ(sol.status, StepStatus::Infeasible);
}

TEST(SolveStep, TubeMembershipAndInputConstraints) {
  SystemModel sys = numerical_system(0.5);
  auto ctrl = setup_controller(sys, numerical_config(true), toy_model(sys, 7), true);
  rng::Rng rng(2);
  int solved = 0;
  for (int trial = 0; trial < 12; ++trial) {
    Eigen::VectorXd x = vec2(rng.uniform(-5.5, -1.5), rng.uniform(-1.5, 1.0));
    auto sol = solve_step(ctrl, x);
    if (sol.status != StepStatus::Optimal) continue;
    ++solved;
    EXPECT_TRUE(ctrl.tube.contains(x - sol.s0, 1e-6));
    const Eigen::VectorXd hu = sys.input_h * sol.u - sys.input_h_rhs;
    EXPECT_LE(hu.maxCoeff(), 1e-9);
    EXPECT_DOUBLE_EQ(sol.u[0], control_law(sol, x, ctrl.k_gain)[0]);
  }
  EXPECT_GE(solved, 10);
}

TEST(SolveStep, ControlLawIdentities) {
  SystemModel sys = numerical_system(0.5);
  auto ctrl = setup_controller(sys, numerical_config(true), toy_model(sys, 9), true);
  auto sol = solve_step(ctrl, vec2(-4.0, -1.0));
  ASSERT_EQ(sol.status, StepStatus::Optimal);
  // x = s0 -> u = v0
  const Eigen::VectorXd u_at_s0 = control_law(sol, sol.s0, ctrl.k_gain);
  EXPECT_NEAR(u_at_s0[0], sol.v(0, 0), 1e-12);
  // K = 0 -> u = v0
  const Eigen::VectorXd u_k0 = control_law(sol, vec2(-3.0, 0.5), Eigen::MatrixXd::Zero(1, 2));
  EXPECT_DOUBLE_EQ(u_k0[0], sol.v(0, 0));

  StepSolution bad;
  bad.status = StepStatus::Infeasible;
  EXPECT_THROW(control_law(bad, vec2(0, 0), ctrl.k_gain), std::logic_error);
}

TEST(Candidate, ShiftedSolutionStaysFeasible) {
  SystemModel sys = numerical_system(0.5);
  auto ctrl = setup_controller(sys, numerical_config(true), toy_model(sys, 11), true);
  rng::Rng rng(5);
  Eigen::VectorXd x = vec2(-5.0, -2.0);
  for (int t = 0; t < 6; ++t) {
    auto sol = solve_step(ctrl, x);
    ASSERT_EQ(sol.status, StepStatus::Optimal) << "step " << t;
    // disturbance inside the support
    Eigen::VectorXd w = vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    Eigen::VectorXd x_next = sys.a * x + sys.b * sol.u + w;
    auto check = check_shifted_candidate(ctrl, sol, x_next);
    EXPECT_TRUE(check.feasible) << "step " << t << " violates " << check.worst_constraint
                                << " by " << check.max_violation;
    x = x_next;
  }
}

TEST(Candidate, RobustBaselineAlsoShifts) {
  SystemModel sys = numerical_system(0.5);
  auto ctrl = setup_controller(sys, numerical_config(true), nullptr, false);
  rng::Rng rng(8);
  Eigen::VectorXd x = vec2(-5.0, -2.0);
  for (int t = 0; t < 6; ++t) {
    auto sol = solve_step(ctrl, x);
    ASSERT_EQ(sol.status, StepStatus::Optimal);
    Eigen::VectorXd w = vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    Eigen::VectorXd x_next = sys.a * x + sys.b * sol.u + w;
    auto check = check_shifted_candidate(ctrl, sol, x_next);
    EXPECT_TRUE(check.feasible) << check.worst_constraint << " " << check.max_violation;
    x = x_next;
  }
}

TEST(SolveStep, LiftedTubeEncodingMatchesFacetRows) {
  // inflate the tube H-rep with duplicate rows past the facet limit: the
  // set is unchanged but solve_step switches to the lifted-generator path
  SystemModel sys = numerical_system(0.5);
  auto model = toy_model(sys, 15);
  auto facet_ctrl = setup_controller(sys, numerical_config(true), model, true);
  auto lifted_ctrl = facet_ctrl;
  {
    auto& poly = lifted_ctrl.tube.poly;
    const Eigen::Index rows = poly.rows();
    const Eigen::Index copies = kTubeFacetRowLimit / rows + 2;
    Eigen::MatrixXd H(rows * copies, poly.dim());
    Eigen::VectorXd h(rows * copies);
    for (Eigen::Index c = 0; c < copies; ++c) {
      H.middleRows(c * rows, rows) = poly.normals;
      h.segment(c * rows, rows) = poly.offsets;
    }
    poly = geometry::Polytope(std::move(H), std::move(h));
    ASSERT_GT(poly.rows(), kTubeFacetRowLimit);
  }
  rng::Rng rng(3);
  for (int t = 0; t < 4; ++t) {
    Eigen::VectorXd x = vec2(rng.uniform(-5.0, -2.0), rng.uniform(-1.0, 0.5));
    auto a = solve_step(facet_ctrl, x);
    auto b = solve_step(lifted_ctrl, x);
    ASSERT_EQ(a.status, StepStatus::Optimal);
    ASSERT_EQ(b.status, StepStatus::Optimal);
    EXPECT_NEAR(a.objective, b.objective, 1e-6 * (1.0 + a.objective));
    EXPECT_NEAR(a.u[0], b.u[0], 1e-5);
    EXPECT_LE((a.s0 - b.s0).lpNorm<Eigen::Infinity>(), 1e-4);
  }
}

TEST(Config, HorizonTwoHasNoMiddleConstraints) {
  SystemModel sys = numerical_system(0.3);
  MPCConfig cfg = numerical_config();
  cfg.horizon = 2;
  auto ctrl = setup_controller(sys, cfg, toy_model(sys, 13, 0.05), true);
  auto sol = solve_step(ctrl, vec2(-3.0, -1.0));
  EXPECT_EQ(sol.status, StepStatus::Optimal);
}
