#pragma once

// Independent primal oracle for the worst-case CVaR: discretize each
// component's support into atoms, solve the primal moment LP per component
// with a self-contained two-phase dense simplex, and minimize over beta by
// golden section. Deliberately shares no code with the interior-point
// backend in conic.hpp, so the dual-route check stays independent.

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "modr/drcvar.hpp"

namespace modr::drcvar {

namespace oracle_detail {

struct SimplexResult {
  bool feasible = false;
  double objective = 0.0;
};

// min c.x s.t. A x = b, x >= 0 by two-phase primal simplex with Bland's rule.
// Intended for moment problems: a handful of rows, many columns.
inline SimplexResult simplex_min(Eigen::MatrixXd a, Eigen::VectorXd b, const Eigen::VectorXd& c,
                                 int max_pivots = 50000) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  for (int i = 0; i < m; ++i)
    if (b[i] < 0) {
      a.row(i) = -a.row(i);
      b[i] = -b[i];
    }

  Eigen::MatrixXd cols(m, n + m);  // columns n..n+m-1 are artificials
  cols.leftCols(n) = a;
  cols.rightCols(m) = Eigen::MatrixXd::Identity(m, m);
  std::vector<int> basis(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) basis[static_cast<size_t>(i)] = n + i;

  const double tol = 1e-10;

  // entering columns restricted to [0, ncols); artificials never re-enter in
  // phase 2 (they may stay basic at level zero for redundant rows).
  // Dantzig pricing, with Bland's rule after a long degenerate streak.
  auto run = [&](const Eigen::VectorXd& cost, int ncols) -> bool {
    int degenerate_streak = 0;
    for (int pivot = 0; pivot < max_pivots; ++pivot) {
      Eigen::MatrixXd B(m, m);
      Eigen::VectorXd cb(m);
      for (int i = 0; i < m; ++i) {
        B.col(i) = cols.col(basis[static_cast<size_t>(i)]);
        cb[i] = cost[basis[static_cast<size_t>(i)]];
      }
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
      Eigen::VectorXd xb = lu.solve(b);
      Eigen::VectorXd yy = B.transpose().partialPivLu().solve(cb);

      const bool bland = degenerate_streak > 40;
      int enter = -1;
      double best_rj = -tol;
      for (int j = 0; j < ncols; ++j) {
        bool is_basic = false;
        for (int i = 0; i < m; ++i)
          if (basis[static_cast<size_t>(i)] == j) {
            is_basic = true;
            break;
          }
        if (is_basic) continue;
        const double rj = cost[j] - yy.dot(cols.col(j));
        if (rj < best_rj) {
          enter = j;
          if (bland) break;  // smallest eligible index
          best_rj = rj;
        }
      }
      if (enter < 0) return true;  // optimal

      Eigen::VectorXd d = lu.solve(cols.col(enter));
      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < m; ++i) {
        if (d[i] > tol) {
          const double ratio = xb[i] / d[i];
          if (leave < 0 || ratio < best_ratio - 1e-14 ||
              (std::abs(ratio - best_ratio) <= 1e-14 &&
               basis[static_cast<size_t>(i)] < basis[static_cast<size_t>(leave)])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return false;  // unbounded (not expected for moment LPs)
      degenerate_streak = (best_ratio <= 1e-12) ? degenerate_streak + 1 : 0;
      basis[static_cast<size_t>(leave)] = enter;
    }
    return false;  // pivot cap
  };

  // phase 1: drive artificials to zero
  Eigen::VectorXd cost1 = Eigen::VectorXd::Zero(n + m);
  cost1.tail(m).setOnes();
  if (!run(cost1, n + m)) return {};
  {
    Eigen::MatrixXd B(m, m);
    for (int i = 0; i < m; ++i) B.col(i) = cols.col(basis[static_cast<size_t>(i)]);
    Eigen::VectorXd xb = B.partialPivLu().solve(b);
    double art = 0.0;
    for (int i = 0; i < m; ++i)
      if (basis[static_cast<size_t>(i)] >= n) art += std::abs(xb[i]);
    if (art > 1e-8) return {};  // infeasible
  }

  // phase 2
  Eigen::VectorXd cost2 = Eigen::VectorXd::Zero(n + m);
  cost2.head(n) = c;
  if (!run(cost2, n)) return {};
  Eigen::MatrixXd B(m, m);
  Eigen::VectorXd cb(m);
  for (int i = 0; i < m; ++i) {
    B.col(i) = cols.col(basis[static_cast<size_t>(i)]);
    cb[i] = cost2[basis[static_cast<size_t>(i)]];
  }
  Eigen::VectorXd xb = B.partialPivLu().solve(b);
  SimplexResult r;
  r.feasible = true;
  r.objective = cb.dot(xb);
  return r;
}

// Discretized worst-case expectation of (xi - beta)^+ for one component.
inline double component_value(const std::vector<double>& atoms, double mu, double var, double beta) {
  const int k = static_cast<int>(atoms.size());
  Eigen::MatrixXd a(3, k + 1);
  Eigen::VectorXd b(3);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(k + 1);
  for (int i = 0; i < k; ++i) {
    const double xi = atoms[static_cast<size_t>(i)];
    a(0, i) = 1.0;
    a(1, i) = xi;
    a(2, i) = (xi - mu) * (xi - mu);
    c[i] = -std::max(xi - beta, 0.0);  // maximize
  }
  a(0, k) = 0.0;
  a(1, k) = 0.0;
  a(2, k) = 1.0;  // slack for the variance inequality
  b << 1.0, mu, var;
  const auto r = simplex_min(a, b, c);
  if (!r.feasible)
    throw std::invalid_argument(
        "lp_primal_oracle: moment LP infeasible (component mean/variance inconsistent with support)");
  return -r.objective;
}

}  // namespace oracle_detail

// Worst-case CVaR_eps over the discretized ambiguity set: outer golden-section
// minimization over beta of  beta + (1/eps) sum_j gamma_j V_j(beta).
inline double lp_primal_oracle(const AmbiguitySet& set, double eps, int grid_points) {
  set.validate();
  if (!(eps > 0.0) || !(eps < 1.0))
    throw std::invalid_argument("lp_primal_oracle: eps must be in (0,1)");
  if (grid_points < 1) throw std::invalid_argument("lp_primal_oracle: grid_points must be >= 1");

  const double w1 = set.support_lo, w2 = set.support_hi;
  std::vector<std::vector<double>> atoms(set.components.size());
  for (size_t j = 0; j < set.components.size(); ++j) {
    auto& at = atoms[j];
    if (grid_points == 1 || w2 == w1) {
      at.push_back(set.components[j].mean);
    } else {
      at.reserve(static_cast<size_t>(grid_points) + 1);
      for (int i = 0; i < grid_points; ++i)
        at.push_back(w1 + (w2 - w1) * static_cast<double>(i) / (grid_points - 1));
      // keep the moment LP feasible for tiny variances
      const double mu = set.components[j].mean;
      bool has_mu = false;
      for (double x : at)
        if (std::abs(x - mu) < 1e-13) {
          has_mu = true;
          break;
        }
      if (!has_mu) {
        at.push_back(mu);
        std::sort(at.begin(), at.end());
      }
    }
  }

  auto g = [&](double beta) {
    double v = beta;
    for (size_t j = 0; j < set.components.size(); ++j) {
      const auto& comp = set.components[j];
      v += comp.weight / eps *
           oracle_detail::component_value(atoms[j], comp.mean, comp.variance, beta);
    }
    return v;
  };

  // the minimizer lies in [w1, w2]: for beta < w1 the slope is 1 - 1/eps < 0,
  // for beta > w2 it is 1
  double lo = w1 - 1.0, hi = w2 + 1.0;
  const double gr = 0.6180339887498949;
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = g(x1), f2 = g(x2);
  for (int it = 0; it < 90 && (hi - lo) > 1e-11 * std::max(1.0, std::abs(hi) + std::abs(lo)); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = g(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = g(x2);
    }
  }
  return std::min(f1, f2);
}

}  // namespace modr::drcvar
