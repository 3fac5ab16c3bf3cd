#pragma once

// State-dependent moment ambiguity sets built from mixture predictions, and
// the worst-case CVaR tightening offsets eta computed with the second-order
// cone reformulation. One canonical orientation (upper bound) serves both
// constraint sides: the lower side negates component means and mirrors the
// support interval before calling in.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "modr/conic.hpp"
#include "modr/geometry.hpp"
#include "modr/mogp.hpp"

namespace modr::drcvar {

struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AmbiguityComponent {
  double weight = 1.0;
  double mean = 0.0;
  double variance = 0.0;
};

struct AmbiguitySet {
  std::vector<AmbiguityComponent> components;
  double support_lo = 0.0;
  double support_hi = 0.0;

  void validate() const {
    if (components.empty()) throw std::invalid_argument("AmbiguitySet: no components");
    if (support_lo > support_hi) throw std::invalid_argument("AmbiguitySet: bad support interval");
    double total = 0.0;
    for (const auto& c : components) {
      if (c.weight < -1e-12 || c.variance < -1e-12)
        throw std::invalid_argument("AmbiguitySet: negative weight or variance");
      if (c.mean < support_lo - 1e-9 || c.mean > support_hi + 1e-9)
        throw std::invalid_argument("AmbiguitySet: component mean outside support");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("AmbiguitySet: weights must sum to 1");
  }

  AmbiguitySet negated() const {
    AmbiguitySet s = *this;
    s.support_lo = -support_hi;
    s.support_hi = -support_lo;
    for (auto& c : s.components) c.mean = -c.mean;
    return s;
  }
};

struct TighteningOffsets {
  Eigen::VectorXd eta_lower;  // eta_1
  Eigen::VectorXd eta_upper;  // eta_2
};

// Exact empirical CVaR_eps via order statistics (validation/metrics only).
inline double cvar_empirical(std::vector<double> samples, double eps) {
  if (samples.empty()) throw std::invalid_argument("cvar_empirical: no samples");
  if (!(eps > 0.0) || eps > 1.0) throw std::invalid_argument("cvar_empirical: eps must be in (0,1]");
  std::sort(samples.begin(), samples.end(), std::greater<double>());
  const double m = eps * static_cast<double>(samples.size());
  const int k = static_cast<int>(std::ceil(m - 1e-12));
  double acc = 0.0;
  for (int i = 0; i + 1 < k; ++i) acc += samples[static_cast<size_t>(i)];
  acc += (m - (k - 1)) * samples[static_cast<size_t>(k - 1)];
  return acc / m;
}

// Component variances are floored at (kVarFloorFrac * support width)^2: the
// cone program's dual variables grow like 1/sigma and the sigma -> 0 limit is
// not attained, so extremely confident components are nudged to the smallest
// scale the solver handles reliably. The floor only ever enlarges eta
// (conservative side) and is far below every acceptance tolerance.
inline constexpr double kVarFloorFrac = 2e-3;

// Minimal eta with sup over the ambiguity set of CVaR_eps(w) <= eta, via the
// second-order cone program of the exact reformulation.
inline double worst_case_cvar_offset(const AmbiguitySet& set, double eps, double tol = 1e-8) {
  set.validate();
  if (!(eps > 0.0) || !(eps < 1.0))
    throw std::invalid_argument("worst_case_cvar_offset: eps must be in (0,1)");

  using conic::LinExpr;
  conic::ProgramBuilder pb;
  const int eta = pb.new_var();
  const int beta = pb.new_var();
  const double w1 = set.support_lo, w2 = set.support_hi;
  const double var_floor = std::pow(kVarFloorFrac * (w2 - w1), 2);

  LinExpr budget = eps * LinExpr::var(beta);
  for (const auto& comp : set.components) {
    const int t = pb.new_var();
    const int om = pb.new_var();
    const int Om = pb.new_var();
    const int ph1 = pb.new_var();
    const int ph2 = pb.new_var();
    const int qh1 = pb.new_var();
    const int qh2 = pb.new_var();
    pb.add_nonneg(Om);
    pb.add_nonneg(ph1);
    pb.add_nonneg(ph2);
    pb.add_nonneg(qh1);
    pb.add_nonneg(qh2);

    const double mu = comp.mean;
    const double second_moment = std::max(comp.variance, var_floor) + mu * mu;
    budget += comp.weight * (LinExpr::var(t) + mu * LinExpr::var(om) + second_moment * LinExpr::var(Om));

    // ||(om + ph1 - ph2, Om - t + w2 ph1 - w1 ph2)|| <= Om + t - w2 ph1 + w1 ph2
    pb.add_soc(LinExpr::var(Om) + LinExpr::var(t) - w2 * LinExpr::var(ph1) + w1 * LinExpr::var(ph2),
               {LinExpr::var(om) + LinExpr::var(ph1) - LinExpr::var(ph2),
                LinExpr::var(Om) - LinExpr::var(t) + w2 * LinExpr::var(ph1) - w1 * LinExpr::var(ph2)});
    // ||(om - 1 + qh1 - qh2, Om - t - beta - eta + w2 qh1 - w1 qh2)||
    //   <= Om + t + beta + eta - w2 qh1 + w1 qh2
    pb.add_soc(LinExpr::var(Om) + LinExpr::var(t) + LinExpr::var(beta) + LinExpr::var(eta) -
                   w2 * LinExpr::var(qh1) + w1 * LinExpr::var(qh2),
               {LinExpr::var(om) - LinExpr(1.0) + LinExpr::var(qh1) - LinExpr::var(qh2),
                LinExpr::var(Om) - LinExpr::var(t) - LinExpr::var(beta) - LinExpr::var(eta) +
                    w2 * LinExpr::var(qh1) - w1 * LinExpr::var(qh2)});
  }
  pb.add_le(budget);
  pb.minimize(LinExpr::var(eta));

  const auto sol = conic::solve_socp(pb.build(), tol);
  if (sol.status == conic::SolveStatus::Optimal) return sol.x[eta];
  // infeasibility cannot occur for a valid ambiguity set
  throw SolverFailure(std::string("worst_case_cvar_offset: solver returned ") +
                      conic::to_string(sol.status));
}

// Component variance covers the full conditional scatter of the disturbance:
// latent posterior variance plus the expert's fitted noise level. With the
// latent part alone, a single pooled GP absorbs multimodal scatter into its
// noise hyperparameter and the ambiguity set stops containing the realized
// law.
inline AmbiguitySet set_from_prediction(const mogp::MixturePrediction& pred, int dim,
                                        const geometry::Box& support) {
  AmbiguitySet s;
  s.support_lo = support.lower[dim];
  s.support_hi = support.upper[dim];
  double total = 0.0;
  for (const auto& c : pred.dims.at(static_cast<size_t>(dim))) total += c.weight;
  for (const auto& c : pred.dims.at(static_cast<size_t>(dim)))
    s.components.push_back(AmbiguityComponent{
        c.weight / total, c.mean, std::max(c.variance, 0.0) + std::max(c.noise_variance, 0.0)});
  return s;
}

// Stacked offsets for both constraint sides, all output dimensions.
inline TighteningOffsets build_offsets(const mogp::MixturePrediction& pred,
                                       const geometry::Box& support, double eps) {
  const int n = static_cast<int>(pred.dims.size());
  if (support.dim() != n) throw std::invalid_argument("build_offsets: dimension mismatch");
  TighteningOffsets out;
  out.eta_lower.resize(n);
  out.eta_upper.resize(n);
  for (int d = 0; d < n; ++d) {
    const AmbiguitySet s = set_from_prediction(pred, d, support);
    out.eta_upper[d] = worst_case_cvar_offset(s, eps);
    out.eta_lower[d] = worst_case_cvar_offset(s.negated(), eps);
  }
  return out;
}

}  // namespace modr::drcvar
