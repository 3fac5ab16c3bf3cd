#include "modr/conic.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace modr::conic;

TEST(Conic, LpCorner) {
  // min x s.t. x >= 3, written with a nonnegative slack: x - s = 3.
  ProgramBuilder pb;
  int x = pb.new_var();
  int s = pb.new_var();
  pb.minimize(LinExpr::var(x));
  pb.add_eq(LinExpr::var(x) - LinExpr::var(s) - LinExpr(3.0));
  pb.add_nonneg(s);
  pb.add_nonneg(x);
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, 3.0, 1e-7);
  EXPECT_LE(sol.eq_residual, 1e-7);
  EXPECT_LE(sol.cone_violation, 1e-7);
}

TEST(Conic, NormEpigraph) {
  // min t s.t. ||(1,1)|| <= t
  ProgramBuilder pb;
  int t = pb.new_var();
  int a = pb.new_var();
  int b = pb.new_var();
  pb.minimize(LinExpr::var(t));
  pb.add_eq(LinExpr::var(a) - LinExpr(1.0));
  pb.add_eq(LinExpr::var(b) - LinExpr(1.0));
  pb.add_soc(LinExpr::var(t), {LinExpr::var(a), LinExpr::var(b)});
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, std::sqrt(2.0), 1e-7);
}

TEST(Conic, Contradiction) {
  // x <= -1 and x >= 0
  ProgramBuilder pb;
  int x = pb.new_var();
  pb.minimize(LinExpr::var(x));
  pb.add_le(LinExpr::var(x) + LinExpr(1.0));
  pb.add_nonneg(x);
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Infeasible);
}

TEST(Conic, Unbounded) {
  // min x s.t. x <= 0
  ProgramBuilder pb;
  int x = pb.new_var();
  pb.minimize(LinExpr::var(x));
  pb.add_le(LinExpr::var(x));
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Unbounded);
}

TEST(Conic, AffineSocEntriesViaBuilder) {
  // min t s.t. ||(x-3, 2x+1)|| <= t, x == 1  ->  t = sqrt(4+9)
  ProgramBuilder pb;
  int t = pb.new_var();
  int x = pb.new_var();
  pb.minimize(LinExpr::var(t));
  pb.add_eq(LinExpr::var(x) - LinExpr(1.0));
  pb.add_soc(LinExpr::var(t),
             {LinExpr::var(x) - LinExpr(3.0), 2.0 * LinExpr::var(x) + LinExpr(1.0)});
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, std::sqrt(13.0), 1e-7);
}

TEST(Conic, ProjectionOntoAffineSet) {
  // min ||x - p|| s.t. C x = d has the closed-form least-norm correction.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 6, m = 2;
    Eigen::MatrixXd C(m, n);
    Eigen::VectorXd d(m), p(n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) C(i, j) = gauss(rng);
    for (int i = 0; i < m; ++i) d[i] = gauss(rng);
    for (int j = 0; j < n; ++j) p[j] = gauss(rng);

    Eigen::VectorXd xstar =
        p - C.transpose() * (C * C.transpose()).ldlt().solve(C * p - d);
    const double obj_expected = (xstar - p).norm();

    ProgramBuilder pb;
    int t = pb.new_var();
    auto xs = pb.new_vars(n);
    pb.minimize(LinExpr::var(t));
    std::vector<LinExpr> entries;
    for (int j = 0; j < n; ++j) entries.push_back(LinExpr::var(xs[j]) - LinExpr(p[j]));
    pb.add_soc(LinExpr::var(t), entries);
    for (int i = 0; i < m; ++i) {
      LinExpr row(-d[i]);
      for (int j = 0; j < n; ++j) row.add(xs[j], C(i, j));
      pb.add_eq(row);
    }
    auto sol = solve_socp(pb.build());
    ASSERT_EQ(sol.status, SolveStatus::Optimal);
    EXPECT_NEAR(sol.objective, obj_expected, 1e-6 * (1.0 + obj_expected));
  }
}

TEST(Conic, BoxLp) {
  // min c.x over l <= x <= u: optimum picks l_i when c_i > 0, u_i otherwise.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 8;
    Eigen::VectorXd c(n), l(n), u(n);
    for (int j = 0; j < n; ++j) {
      c[j] = unif(rng);
      l[j] = unif(rng) - 1.5;
      u[j] = l[j] + 0.5 + std::abs(unif(rng));
    }
    double expected = 0.0;
    for (int j = 0; j < n; ++j) expected += c[j] * (c[j] > 0 ? l[j] : u[j]);

    ProgramBuilder pb;
    auto xs = pb.new_vars(n);
    LinExpr obj;
    for (int j = 0; j < n; ++j) obj.add(xs[j], c[j]);
    pb.minimize(obj);
    for (int j = 0; j < n; ++j) {
      pb.add_le(LinExpr::var(xs[j]) - LinExpr(u[j]));
      pb.add_le(LinExpr(l[j]) - LinExpr::var(xs[j]));
    }
    auto sol = solve_socp(pb.build());
    ASSERT_EQ(sol.status, SolveStatus::Optimal);
    EXPECT_NEAR(sol.objective, expected, 1e-6 * (1.0 + std::abs(expected)));
  }
}

TEST(Conic, MinOverUnitBall) {
  // min c.x s.t. ||x|| <= 1  ->  -||c||
  Eigen::Vector3d c(0.3, -1.2, 0.5);
  ProgramBuilder pb;
  int t = pb.new_var();
  auto xs = pb.new_vars(3);
  LinExpr obj;
  for (int j = 0; j < 3; ++j) obj.add(xs[j], c[j]);
  pb.minimize(obj);
  pb.add_eq(LinExpr::var(t) - LinExpr(1.0));
  pb.add_soc(LinExpr::var(t), {LinExpr::var(xs[0]), LinExpr::var(xs[1]), LinExpr::var(xs[2])});
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, -c.norm(), 1e-7);
}

TEST(Conic, WeakDualitySpotCheck) {
  // Any hand-built feasible point bounds the reported optimum from above.
  ProgramBuilder pb;
  int x = pb.new_var(), y = pb.new_var();
  pb.minimize(LinExpr::var(x) + 2.0 * LinExpr::var(y));
  pb.add_le(LinExpr(1.0) - LinExpr::var(x) - LinExpr::var(y));  // x + y >= 1
  pb.add_nonneg(x);
  pb.add_nonneg(y);
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  // feasible points: (1,0) cost 1; (0,1) cost 2; (0.5,0.5) cost 1.5
  EXPECT_LE(sol.objective, 1.0 + 1e-7);
  EXPECT_LE(sol.objective, 1.5);
  EXPECT_NEAR(sol.objective, 1.0, 1e-7);
}

TEST(Conic, QuadraticEpigraphRotatedCone) {
  // min x^2 + (y-1)^2 via t: ||((1-t)/2, x, y-1)|| <= (1+t)/2, optimum t=0 at (0,1).
  ProgramBuilder pb;
  int t = pb.new_var(), x = pb.new_var(), y = pb.new_var();
  pb.minimize(LinExpr::var(t));
  pb.add_soc(0.5 * LinExpr::var(t) + LinExpr(0.5),
             {LinExpr(0.5) - 0.5 * LinExpr::var(t), LinExpr::var(x), LinExpr::var(y) - LinExpr(1.0)});
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, 0.0, 1e-6);
  EXPECT_NEAR(sol.x[x], 0.0, 1e-5);
  EXPECT_NEAR(sol.x[y], 1.0, 1e-5);

  // same with an active constraint y <= 0.25: optimum (0, 0.25), t = 0.5625
  ProgramBuilder pb2;
  t = pb2.new_var();
  x = pb2.new_var();
  y = pb2.new_var();
  pb2.minimize(LinExpr::var(t));
  pb2.add_soc(0.5 * LinExpr::var(t) + LinExpr(0.5),
              {LinExpr(0.5) - 0.5 * LinExpr::var(t), LinExpr::var(x), LinExpr::var(y) - LinExpr(1.0)});
  pb2.add_le(LinExpr::var(y) - LinExpr(0.25));
  auto sol2 = solve_socp(pb2.build());
  ASSERT_EQ(sol2.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol2.objective, 0.5625, 1e-6);
}

TEST(Conic, Determinism) {
  ProgramBuilder pb;
  int t = pb.new_var();
  auto xs = pb.new_vars(4);
  pb.minimize(LinExpr::var(t) + 0.1 * LinExpr::var(xs[2]));
  std::vector<LinExpr> e;
  for (int j = 0; j < 4; ++j) e.push_back(LinExpr::var(xs[j]) - LinExpr(0.3 * j));
  pb.add_soc(LinExpr::var(t), e);
  pb.add_le(LinExpr(0.2) - LinExpr::var(xs[0]));
  auto p = pb.build();
  auto a = solve_socp(p);
  auto b = solve_socp(p);
  ASSERT_EQ(a.status, SolveStatus::Optimal);
  ASSERT_EQ(b.status, SolveStatus::Optimal);
  EXPECT_TRUE(a.x == b.x);  // bitwise
  EXPECT_EQ(a.objective, b.objective);
}

TEST(Conic, DumpRoundtripsKeyNumbers) {
  ProgramBuilder pb;
  int x = pb.new_var();
  pb.minimize(LinExpr::var(x));
  pb.add_le(LinExpr(3.0) - LinExpr::var(x));
  auto p = pb.build();
  auto text = p.dump();
  EXPECT_NE(text.find("vars 1"), std::string::npos);
  EXPECT_NE(text.find("ineq 1"), std::string::npos);
}

TEST(Conic, ScalesToModeratePrograms) {
  // random feasible LP with many rows: min sum(x) s.t. x >= a (elementwise), plus couplings
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const int n = 60;
  Eigen::VectorXd a(n);
  for (int j = 0; j < n; ++j) a[j] = unif(rng);
  ProgramBuilder pb;
  auto xs = pb.new_vars(n);
  LinExpr obj;
  for (int j = 0; j < n; ++j) obj.add(xs[j], 1.0);
  pb.minimize(obj);
  for (int j = 0; j < n; ++j) pb.add_le(LinExpr(a[j]) - LinExpr::var(xs[j]));
  auto sol = solve_socp(pb.build());
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, a.sum(), 1e-6 * (1.0 + std::abs(a.sum())));
}
