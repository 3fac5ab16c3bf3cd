#include "modr/drcvar.hpp"
#include "modr/drcvar_oracle.hpp"

#include <gtest/gtest.h>

#include <cstdio>

#include "modr/rng.hpp"

using namespace modr;
using namespace modr::drcvar;

namespace {

AmbiguitySet single(double mu, double var, double lo, double hi) {
  AmbiguitySet s;
  s.components = {AmbiguityComponent{1.0, mu, var}};
  s.support_lo = lo;
  s.support_hi = hi;
  return s;
}

AmbiguitySet random_set(rng::Rng& rng, int max_components = 4) {
  AmbiguitySet s;
  const double lo = rng.uniform(-1.0, -0.2);
  const double hi = rng.uniform(0.2, 1.0);
  s.support_lo = lo;
  s.support_hi = hi;
  const int m = 1 + static_cast<int>(rng.uniform() * max_components);
  Eigen::VectorXd w(m);
  for (int j = 0; j < m; ++j) w[j] = 0.05 + rng.uniform();
  w /= w.sum();
  for (int j = 0; j < m; ++j) {
    const double mu = rng.uniform(lo * 0.95, hi * 0.95);
    const double half = std::min(mu - lo, hi - mu);
    const double sd = std::max(rng.uniform(0.0, 0.6) * std::max(half, 0.05), 0.01 * (hi - lo));
    s.components.push_back(AmbiguityComponent{w[j], mu, sd * sd});
  }
  return s;
}

}  // namespace

TEST(CvarEmpirical, SpecValues) {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_NEAR(cvar_empirical(v, 0.2), 9.5, 1e-12);
  EXPECT_NEAR(cvar_empirical(v, 1.0), 5.5, 1e-12);
  std::vector<double> c(7, 3.25);
  EXPECT_NEAR(cvar_empirical(c, 0.37), 3.25, 1e-12);
  EXPECT_THROW(cvar_empirical(v, 0.0), std::invalid_argument);
  EXPECT_THROW(cvar_empirical(v, 1.5), std::invalid_argument);
}

TEST(WorstCaseCvar, PointMassCases) {
  EXPECT_NEAR(worst_case_cvar_offset(single(0.0, 0.0, 0.0, 0.0), 0.2), 0.0, 1e-7);
  EXPECT_NEAR(worst_case_cvar_offset(single(0.3, 0.0, 0.3, 0.3), 0.2), 0.3, 1e-7);
}

TEST(WorstCaseCvar, ClosedFormMeanVariance) {
  // wide support: eta = mu + sigma sqrt((1-eps)/eps)
  struct Case {
    double mu, sigma, eps;
  } cases[] = {{0.0, 0.1, 0.2}, {0.1, 0.2, 0.1}, {-0.2, 0.15, 0.05}, {0.0, 0.3, 0.5}};
  for (const auto& c : cases) {
    const double expect = c.mu + c.sigma * std::sqrt((1.0 - c.eps) / c.eps);
    const double got = worst_case_cvar_offset(single(c.mu, c.sigma * c.sigma, -10.0, 10.0), c.eps);
    EXPECT_NEAR(got, expect, 1e-3 * std::max(1.0, std::abs(expect)));
  }
  // the spec's pinned instance
  EXPECT_NEAR(worst_case_cvar_offset(single(0.0, 0.01, -0.8, 0.8), 0.2), 0.2, 1e-3);
}

TEST(WorstCaseCvar, OracleAgreesOnPointSupport) {
  const double got = worst_case_cvar_offset(single(0.3, 0.0, 0.3, 0.3), 0.2);
  const double orc = lp_primal_oracle(single(0.3, 0.0, 0.3, 0.3), 0.2, 1);
  EXPECT_NEAR(got, orc, 1e-7);
}

TEST(Oracle, SingleAtomTrivial) {
  EXPECT_NEAR(lp_primal_oracle(single(0.25, 0.0, -1.0, 1.0), 0.2, 1), 0.25, 1e-9);
}

TEST(Oracle, ClosedFormOnWideSupport) {
  const double expect = 0.0 + 0.1 * std::sqrt(0.8 / 0.2);
  const double got = lp_primal_oracle(single(0.0, 0.01, -2.0, 2.0), 0.2, 2001);
  EXPECT_NEAR(got, expect, 1e-3 * std::max(1.0, expect));
}

TEST(Oracle, GridRefinementStable) {
  rng::Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    AmbiguitySet s = random_set(rng);
    const double a = lp_primal_oracle(s, 0.2, 501);
    const double b = lp_primal_oracle(s, 0.2, 2001);
    EXPECT_NEAR(a, b, 1e-3 * std::max(1.0, std::abs(b)));
  }
}

TEST(Oracle, MeanOutsideSupportRejected) {
  AmbiguitySet s = single(2.0, 0.0, -1.0, 1.0);
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(DualPrimal, AgreementOnRandomMixtures) {
  rng::Rng rng(11);
  double max_rel = 0.0;
  const double epses[] = {0.05, 0.1, 0.2, 0.5};
  for (int t = 0; t < 25; ++t) {
    AmbiguitySet s = random_set(rng);
    const double eps = epses[t % 4];
    const double dual = worst_case_cvar_offset(s, eps);
    const double primal = lp_primal_oracle(s, eps, 2001);
    // weak duality on the discretized primal
    EXPECT_GE(dual, primal - 1e-6);
    const double rel = std::abs(dual - primal) / std::max(1.0, std::abs(primal));
    max_rel = std::max(max_rel, rel);
    EXPECT_LE(rel, 1e-3);
  }
  std::printf("[ dual-primal ] max relative gap over 25 instances: %.3e\n", max_rel);
}

TEST(Monotonicity, VarianceAndEps) {
  AmbiguitySet s;
  s.support_lo = -0.8;
  s.support_hi = 0.8;
  s.components = {AmbiguityComponent{0.6, 0.1, 0.01}, AmbiguityComponent{0.4, -0.2, 0.02}};
  const double base = worst_case_cvar_offset(s, 0.2);
  AmbiguitySet bigger = s;
  bigger.components[0].variance = 0.04;
  EXPECT_GE(worst_case_cvar_offset(bigger, 0.2), base - 1e-7);

  const double tight = worst_case_cvar_offset(s, 0.1);
  const double loose = worst_case_cvar_offset(s, 0.5);
  EXPECT_GE(tight, base - 1e-7);
  EXPECT_GE(base, loose - 1e-7);
}

TEST(Monotonicity, SupportBound) {
  rng::Rng rng(23);
  for (int t = 0; t < 10; ++t) {
    AmbiguitySet s = random_set(rng);
    const double eta = worst_case_cvar_offset(s, 0.2);
    EXPECT_LE(eta, s.support_hi + 1e-6);  // never beats the robust bound
  }
}

TEST(BuildOffsets, ZeroAndSymmetry) {
  // zero-mean zero-variance prediction on point support: exactly zero offsets
  {
    geometry::Box zero_support = geometry::Box::zero(2);
    mogp::MixturePrediction zp;
    zp.dims.resize(2);
    zp.dims[0] = {mogp::MixtureComponent{1.0, 0.0, 0.0}};
    zp.dims[1] = {mogp::MixtureComponent{1.0, 0.0, 0.0}};
    auto z = build_offsets(zp, zero_support, 0.2);
    EXPECT_NEAR(z.eta_lower[0], 0.0, 1e-7);
    EXPECT_NEAR(z.eta_upper[1], 0.0, 1e-7);
  }

  geometry::Box support(Eigen::VectorXd::Constant(2, -0.8), Eigen::VectorXd::Constant(2, 0.8));
  mogp::MixturePrediction pred;
  pred.dims.resize(2);
  pred.dims[0] = {mogp::MixtureComponent{1.0, 0.0, 0.0}};
  pred.dims[1] = {mogp::MixtureComponent{1.0, 0.0, 0.0}};
  auto off = build_offsets(pred, support, 0.2);
  // on a wide support the variance floor leaves a small conservative margin
  EXPECT_GE(off.eta_lower[0], -1e-9);
  EXPECT_LE(off.eta_upper[0], 0.02);

  // mirrored mixture: eta_1 == eta_2
  pred.dims[0] = {mogp::MixtureComponent{0.5, 0.3, 0.01}, mogp::MixtureComponent{0.5, -0.3, 0.01}};
  pred.dims[1] = {mogp::MixtureComponent{1.0, 0.0, 0.04}};
  auto off2 = build_offsets(pred, support, 0.2);
  EXPECT_NEAR(off2.eta_lower[0], off2.eta_upper[0], 1e-6);
  EXPECT_NEAR(off2.eta_lower[1], off2.eta_upper[1], 1e-6);

  // eps monotonicity on the stacked interface
  auto off_tight = build_offsets(pred, support, 0.1);
  auto off_loose = build_offsets(pred, support, 0.5);
  for (int d = 0; d < 2; ++d) {
    EXPECT_GE(off_tight.eta_upper[d], off_loose.eta_upper[d] - 1e-7);
    EXPECT_GE(off_tight.eta_lower[d], off_loose.eta_lower[d] - 1e-7);
  }
}

TEST(Dominance, CoversEmpiricalMixtureCvar) {
  // eta dominates the empirical CVaR of samples from the predicted mixture
  // truncated to the support
  AmbiguitySet s;
  s.support_lo = -0.8;
  s.support_hi = 0.8;
  s.components = {AmbiguityComponent{0.55, 0.25, 0.01}, AmbiguityComponent{0.45, -0.1, 0.02}};
  const double eps = 0.2;
  const double eta = worst_case_cvar_offset(s, eps);

  rng::Rng rng(7);
  const int n = 1000000;
  std::vector<double> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const auto& c = s.components[u < 0.55 ? 0 : 1];
    double w = c.mean + std::sqrt(c.variance) * rng.normal();
    w = std::clamp(w, s.support_lo, s.support_hi);
    samples.push_back(w);
  }
  const double emp = cvar_empirical(samples, eps);
  EXPECT_GE(eta, emp - 2e-2);
}
