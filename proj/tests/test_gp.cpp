#include "modr/gp.hpp"

#include <gtest/gtest.h>

#include <Eigen/LU>

#include <random>

using namespace modr::gp;

namespace {
Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}
}  // namespace

TEST(Gp, EmptyConditioning) {
  KernelParams kp = KernelParams::iso(1, 1.0, 2.5, 0.1);
  GpExpert e(1, kp);
  auto p = e.posterior(vec1(0.7));
  EXPECT_DOUBLE_EQ(p.mean, 0.0);
  EXPECT_DOUBLE_EQ(p.variance, 2.5);
}

TEST(Gp, NoiselessInterpolation) {
  KernelParams kp = KernelParams::iso(1, 1.0, 1.0, 0.0);
  GpExpert e(1, kp);
  e.add_point(vec1(0.0), 1.0);
  auto p = e.posterior(vec1(0.0));
  EXPECT_NEAR(p.mean, 1.0, 1e-6);
  EXPECT_NEAR(p.variance, 0.0, 1e-6);
}

TEST(Gp, OnePointWithUnitNoise) {
  KernelParams kp = KernelParams::iso(1, 1.0, 1.0, 1.0);
  GpExpert e(1, kp);
  e.add_point(vec1(0.0), 1.0);
  auto p = e.posterior(vec1(0.0));
  EXPECT_NEAR(p.mean, 0.5, 1e-12);
  EXPECT_NEAR(p.variance, 0.5, 1e-12);
}

// Cholesky path against the explicit dense-inverse formula.
TEST(Gp, MatchesDenseSolveFormula) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> size_dist(1, 50);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = size_dist(rng);
    const int d = 1 + trial % 3;
    KernelParams kp = KernelParams::iso(d, 0.5 + 0.1 * (trial % 5), 1.3, 0.05);
    Eigen::MatrixXd Z(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) Z(i, j) = gauss(rng);
      y[i] = gauss(rng);
    }
    Eigen::VectorXd q(d);
    for (int j = 0; j < d; ++j) q[j] = gauss(rng);

    auto p = gp_posterior(Z, y, kp, q);

    Eigen::MatrixXd K(n, n);
    Eigen::VectorXd kv(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) K(i, j) = se_kernel(Z.row(i).transpose(), Z.row(j).transpose(), kp);
      kv[i] = se_kernel(Z.row(i).transpose(), q, kp);
    }
    K.diagonal().array() += kp.noise_variance;
    Eigen::MatrixXd Kinv = K.inverse();
    const double mean = kv.dot(Kinv * y);
    const double var = kp.signal_variance - kv.dot(Kinv * kv);

    const double scale = std::max(1.0, std::abs(mean));
    EXPECT_NEAR(p.mean, mean, 1e-10 * scale);
    EXPECT_NEAR(p.variance, std::max(var, 0.0), 1e-10 * std::max(1.0, std::abs(var)));
    // posterior variance never exceeds the prior variance
    EXPECT_LE(p.variance, kp.signal_variance + 1e-12);
  }
}

TEST(Gp, IncrementalCholeskyMatchesRebuild) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 1.0);
  KernelParams kp = KernelParams::iso(2, 0.8, 1.0, 0.1);
  GpExpert inc(2, kp);
  std::vector<Eigen::VectorXd> zs;
  std::vector<double> ys;
  for (int i = 0; i < 25; ++i) {
    Eigen::VectorXd z(2);
    z << gauss(rng), gauss(rng);
    inc.add_point(z, gauss(rng));
    zs.push_back(z);
    ys.push_back(inc.targets()[inc.size() - 1]);
  }
  // remove a few interior points
  for (int idx : {20, 3, 11, 0}) {
    inc.remove_point(idx);
    zs.erase(zs.begin() + idx);
    ys.erase(ys.begin() + idx);
  }
  GpExpert ref(2, kp);
  for (size_t i = 0; i < zs.size(); ++i) ref.add_point(zs[i], ys[i]);

  Eigen::VectorXd q(2);
  q << 0.2, -0.4;
  auto pi = inc.posterior(q);
  auto pr = ref.posterior(q);
  EXPECT_NEAR(pi.mean, pr.mean, 1e-9);
  EXPECT_NEAR(pi.variance, pr.variance, 1e-9);
  EXPECT_NEAR(inc.log_marginal(), ref.log_marginal(), 1e-8);
}

TEST(Gp, HyperparameterFitImprovesMarginal) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss(0.0, 1.0);
  KernelParams kp = KernelParams::iso(1, 3.0, 0.2, 0.5);  // deliberately off
  GpExpert e(1, kp);
  for (int i = 0; i < 40; ++i) {
    const double x = -2.0 + 0.1 * i;
    e.add_point(vec1(x), std::sin(2.0 * x) + 0.05 * gauss(rng));
  }
  const double before = e.log_marginal();
  e.fit_hyperparams(50);
  const double after = e.log_marginal();
  EXPECT_GT(after, before + 1.0);
}

TEST(Gp, CholeskyFailureSignalled) {
  // duplicated inputs with zero noise make the Gram matrix singular; the
  // incremental factor absorbs it with jitter but set_params must refuse
  KernelParams kp = KernelParams::iso(1, 1.0, 1.0, 0.0);
  GpExpert e(1, kp);
  e.add_point(vec1(0.0), 1.0);
  e.add_point(vec1(0.0), -1.0);
  EXPECT_THROW(e.set_params(kp), std::runtime_error);
}
