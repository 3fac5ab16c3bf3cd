#pragma once

// Set arithmetic for tube MPC: axis-aligned boxes, H-representation
// polytopes, the Rakovic finite-sum outer approximation of the minimal
// robust positively invariant set, and maximal invariant terminal sets.
//
// The mRPI approximation is a scaled Minkowski sum of linear images of a
// box, i.e. a zonotope. It is kept in generator form (exact support
// function, used for constraint tightening) alongside an exact
// H-representation built from generator-subset facet normals.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "modr/conic.hpp"

namespace modr::geometry {

struct Box {
  Eigen::VectorXd lower, upper;
  bool empty = false;

  Box() = default;
  Box(Eigen::VectorXd lo, Eigen::VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size() || lower.size() == 0)
      throw std::invalid_argument("Box: bad dimensions");
    if ((lower.array() > upper.array()).any())
      throw std::invalid_argument("Box: lower > upper (use the empty flag for empty boxes)");
  }
  static Box symmetric(const Eigen::VectorXd& radius) { return Box(-radius, radius); }
  static Box zero(int n) {
    return Box(Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n));
  }

  int dim() const { return static_cast<int>(lower.size()); }
  Eigen::VectorXd center() const { return 0.5 * (lower + upper); }
  Eigen::VectorXd radius() const { return 0.5 * (upper - lower); }
  bool is_point() const { return !empty && (upper - lower).lpNorm<Eigen::Infinity>() == 0.0; }

  double support(const Eigen::VectorXd& d) const {
    double v = 0.0;
    for (int i = 0; i < dim(); ++i) v += std::max(d[i] * lower[i], d[i] * upper[i]);
    return v;
  }
  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const {
    if (empty) return false;
    return (x.array() >= lower.array() - tol).all() && (x.array() <= upper.array() + tol).all();
  }
};

inline Box minkowski_sum_box(const Box& a, const Box& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("minkowski_sum_box: dimension mismatch");
  if (a.empty || b.empty) {
    Box r = Box::zero(a.dim());
    r.empty = true;
    return r;
  }
  return Box(a.lower + b.lower, a.upper + b.upper);
}

struct Polytope {
  Eigen::MatrixXd normals;  // rows H
  Eigen::VectorXd offsets;  // h, set {s : H s <= h}
  bool empty = false;

  Polytope() = default;
  Polytope(Eigen::MatrixXd H, Eigen::VectorXd h) : normals(std::move(H)), offsets(std::move(h)) {
    if (normals.rows() != offsets.size()) throw std::invalid_argument("Polytope: H/h mismatch");
  }

  int dim() const { return static_cast<int>(normals.cols()); }
  Eigen::Index rows() const { return normals.rows(); }

  static Polytope from_box(const Box& b) {
    const int n = b.dim();
    Eigen::MatrixXd H(2 * n, n);
    Eigen::VectorXd h(2 * n);
    H.setZero();
    for (int i = 0; i < n; ++i) {
      H(2 * i, i) = 1.0;
      h[2 * i] = b.upper[i];
      H(2 * i + 1, i) = -1.0;
      h[2 * i + 1] = -b.lower[i];
    }
    Polytope p(std::move(H), std::move(h));
    p.empty = b.empty;
    return p;
  }

  double max_residual(const Eigen::VectorXd& x) const {
    if (rows() == 0) return 0.0;
    return (normals * x - offsets).maxCoeff();
  }
  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const {
    return !empty && max_residual(x) <= tol;
  }

  // Scales offsets so each normal row has unit norm.
  void normalize_rows() {
    for (Eigen::Index i = 0; i < rows(); ++i) {
      const double nrm = normals.row(i).norm();
      if (nrm > 0) {
        normals.row(i) /= nrm;
        offsets[i] /= nrm;
      }
    }
  }
};

// Support function sup{d.s : s in p} via LP. Returns +inf when unbounded,
// -inf when p is empty.
inline double polytope_support(const Polytope& p, const Eigen::VectorXd& d) {
  if (p.empty) return -std::numeric_limits<double>::infinity();
  if (p.rows() == 0) return std::numeric_limits<double>::infinity();
  conic::ConicProgram prog;
  const int n = p.dim();
  prog.objective = -d;
  prog.eq_lhs.resize(0, n);
  prog.eq_rhs.resize(0);
  prog.ineq_lhs = p.normals;
  prog.ineq_rhs = p.offsets;
  auto sol = conic::solve_socp(prog, 1e-9);
  switch (sol.status) {
    case conic::SolveStatus::Optimal: return -sol.objective;
    case conic::SolveStatus::Unbounded: return std::numeric_limits<double>::infinity();
    case conic::SolveStatus::Infeasible: return -std::numeric_limits<double>::infinity();
    default: throw std::runtime_error("polytope_support: numerical failure");
  }
}

// Feasibility check via min t s.t. H s - t <= h.
inline bool polytope_nonempty(const Polytope& p, double tol = 1e-9) {
  if (p.empty) return false;
  if (p.rows() == 0) return true;
  conic::ProgramBuilder pb;
  const int n = p.dim();
  auto xs = pb.new_vars(n);
  int t = pb.new_var();
  pb.minimize(conic::LinExpr::var(t));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    conic::LinExpr row(-p.offsets[i]);
    for (int j = 0; j < n; ++j) row.add(xs[j], p.normals(i, j));
    row.add(t, -1.0);
    pb.add_le(row);
  }
  auto sol = conic::solve_socp(pb.build(), 1e-9);
  if (sol.status == conic::SolveStatus::Unbounded) return true;
  if (sol.status != conic::SolveStatus::Optimal)
    throw std::runtime_error("polytope_nonempty: solver failure");
  return sol.objective <= tol;
}

// Drops rows implied by the others (per-facet support LPs). Keeps rows whose
// removal would change the set by more than tol.
inline Polytope remove_redundant(const Polytope& p, double tol = 1e-9) {
  if (p.empty || p.rows() <= 1) return p;
  std::vector<Eigen::Index> keep;
  const Eigen::Index m = p.rows();
  std::vector<bool> alive(static_cast<size_t>(m), true);
  for (Eigen::Index i = 0; i < m; ++i) {
    // relax row i and maximize its normal over the rest
    Polytope q;
    q.normals.resize(m, p.dim());
    q.offsets.resize(m);
    Eigen::Index r = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!alive[static_cast<size_t>(j)]) continue;
      q.normals.row(r) = p.normals.row(j);
      q.offsets[r] = p.offsets[j] + (j == i ? 1.0 : 0.0);
      ++r;
    }
    q.normals.conservativeResize(r, Eigen::NoChange);
    q.offsets.conservativeResize(r);
    const double sup = polytope_support(q, p.normals.row(i).transpose());
    if (sup <= p.offsets[i] + tol) alive[static_cast<size_t>(i)] = false;
  }
  Eigen::Index kept = 0;
  for (bool a : alive) kept += a;
  Polytope out;
  out.normals.resize(kept, p.dim());
  out.offsets.resize(kept);
  Eigen::Index r = 0;
  for (Eigen::Index j = 0; j < m; ++j)
    if (alive[static_cast<size_t>(j)]) {
      out.normals.row(r) = p.normals.row(j);
      out.offsets[r] = p.offsets[j];
      ++r;
    }
  return out;
}

struct ClosedLoopMatrix {
  Eigen::MatrixXd a_cl;
  double spectral_radius = 0.0;

  ClosedLoopMatrix() = default;
  explicit ClosedLoopMatrix(Eigen::MatrixXd m) : a_cl(std::move(m)) {
    if (a_cl.rows() != a_cl.cols()) throw std::invalid_argument("ClosedLoopMatrix: not square");
    spectral_radius = a_cl.eigenvalues().cwiseAbs().maxCoeff();
  }
};

// ---------------------------------------------------------------------------
// mRPI approximation (Rakovic scaled finite Minkowski sum).

struct MrpiSet {
  Eigen::VectorXd center;    // usually zero
  Eigen::MatrixXd generators;  // n x g (columns), parallel columns merged
  double alpha = 0.0;
  int terms = 0;
  Polytope poly;             // exact H-representation of the zonotope
  bool converged = true;

  int dim() const { return static_cast<int>(center.size()); }

  double support(const Eigen::VectorXd& d) const {
    double v = d.dot(center);
    for (Eigen::Index j = 0; j < generators.cols(); ++j) v += std::abs(d.dot(generators.col(j)));
    return v;
  }
  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const {
    if (generators.cols() == 0) return (x - center).lpNorm<Eigen::Infinity>() <= tol;
    return poly.contains(x, tol);
  }
  Box bounding_box() const {
    const int n = dim();
    Eigen::VectorXd hi(n), lo(n);
    for (int i = 0; i < n; ++i) {
      hi[i] = support(Eigen::VectorXd::Unit(n, i));
      lo[i] = -support(-Eigen::VectorXd::Unit(n, i));
    }
    return Box(lo, hi);
  }
};

namespace detail {

// Merge parallel generator columns (valid for zonotopes) and drop near-zero ones.
inline Eigen::MatrixXd merge_generators(const Eigen::MatrixXd& gens, double drop_tol) {
  std::vector<Eigen::VectorXd> dirs;
  std::vector<double> mags;
  for (Eigen::Index j = 0; j < gens.cols(); ++j) {
    Eigen::VectorXd g = gens.col(j);
    const double nrm = g.norm();
    if (nrm < drop_tol) continue;
    Eigen::VectorXd u = g / nrm;
    // canonical orientation
    for (int i = 0; i < u.size(); ++i) {
      if (std::abs(u[i]) > 1e-12) {
        if (u[i] < 0) u = -u;
        break;
      }
    }
    bool merged = false;
    for (size_t k = 0; k < dirs.size(); ++k) {
      if ((dirs[k] - u).lpNorm<Eigen::Infinity>() < 1e-10) {
        mags[k] += nrm;
        merged = true;
        break;
      }
    }
    if (!merged) {
      dirs.push_back(u);
      mags.push_back(nrm);
    }
  }
  Eigen::MatrixXd out(gens.rows(), static_cast<Eigen::Index>(dirs.size()));
  for (size_t k = 0; k < dirs.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = mags[k] * dirs[k];
  return out;
}

inline std::uint64_t quantize_key(const Eigen::VectorXd& v) {
  std::uint64_t h = 1469598103934665603ull;
  for (int i = 0; i < v.size(); ++i) {
    const auto q = static_cast<std::int64_t>(std::llround(v[i] * 1e8));
    h ^= static_cast<std::uint64_t>(q) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return h;
}

// Exact facet normals of a zonotope: null spaces of (n-1)-subsets of
// generators. Offsets come from the exact support function, so every row is
// a valid supporting hyperplane and all true facets are present.
inline Polytope zonotope_hrep(const Eigen::VectorXd& center, const Eigen::MatrixXd& gens,
                              std::size_t combo_cap = 200000) {
  const int n = static_cast<int>(center.size());
  const int g = static_cast<int>(gens.cols());
  std::vector<Eigen::VectorXd> normals;
  if (n == 1) {
    normals.push_back(Eigen::VectorXd::Ones(1));
  } else if (g < n - 1) {
    // degenerate zonotope (lower-dimensional); fall back to axis directions
    for (int i = 0; i < n; ++i) normals.push_back(Eigen::VectorXd::Unit(n, i));
  } else {
    std::vector<int> idx(static_cast<size_t>(n - 1));
    std::unordered_set<std::uint64_t> seen;
    std::size_t combos = 1;
    for (int i = 0; i < n - 1; ++i) combos = combos * static_cast<std::size_t>(g - i) / static_cast<std::size_t>(i + 1);
    if (combos > combo_cap)
      throw std::runtime_error("zonotope_hrep: facet enumeration too large; reduce mRPI eps");

    for (int i = 0; i < n - 1; ++i) idx[static_cast<size_t>(i)] = i;
    while (true) {
      Eigen::MatrixXd M(n - 1, n);
      for (int i = 0; i < n - 1; ++i) M.row(i) = gens.col(idx[static_cast<size_t>(i)]).transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
      if (lu.dimensionOfKernel() == 1) {
        Eigen::VectorXd d = lu.kernel().col(0);
        d /= d.norm();
        for (int i = 0; i < n; ++i) {
          if (std::abs(d[i]) > 1e-12) {
            if (d[i] < 0) d = -d;
            break;
          }
        }
        if (seen.insert(quantize_key(d)).second) normals.push_back(d);
      }
      // next combination
      int i = n - 2;
      while (i >= 0 && idx[static_cast<size_t>(i)] == g - (n - 1) + i) --i;
      if (i < 0) break;
      ++idx[static_cast<size_t>(i)];
      for (int j = i + 1; j < n - 1; ++j) idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
    }
    if (normals.empty())
      for (int i = 0; i < n; ++i) normals.push_back(Eigen::VectorXd::Unit(n, i));
  }

  Eigen::MatrixXd H(2 * static_cast<Eigen::Index>(normals.size()), n);
  Eigen::VectorXd h(2 * static_cast<Eigen::Index>(normals.size()));
  auto support = [&](const Eigen::VectorXd& d) {
    double v = d.dot(center);
    for (Eigen::Index j = 0; j < gens.cols(); ++j) v += std::abs(d.dot(gens.col(j)));
    return v;
  };
  for (size_t k = 0; k < normals.size(); ++k) {
    const auto& d = normals[k];
    H.row(2 * static_cast<Eigen::Index>(k)) = d.transpose();
    h[2 * static_cast<Eigen::Index>(k)] = support(d);
    H.row(2 * static_cast<Eigen::Index>(k) + 1) = -d.transpose();
    h[2 * static_cast<Eigen::Index>(k) + 1] = support(-d);
  }
  return Polytope(std::move(H), std::move(h));
}

}  // namespace detail

inline MrpiSet mrpi_approx(const ClosedLoopMatrix& a_cl, const Box& w, double eps,
                           int max_terms = 400) {
  if (eps <= 0) throw std::invalid_argument("mrpi_approx: eps must be positive");
  if (a_cl.spectral_radius >= 1.0)
    throw std::invalid_argument("mrpi_approx: spectral radius must be < 1");
  const int n = w.dim();
  if (a_cl.a_cl.rows() != n) throw std::invalid_argument("mrpi_approx: dimension mismatch");

  MrpiSet z;
  z.center = Eigen::VectorXd::Zero(n);

  if (w.is_point() && w.lower.lpNorm<Eigen::Infinity>() == 0.0) {
    z.generators.resize(n, 0);
    z.alpha = 0.0;
    z.terms = 0;
    z.poly = Polytope::from_box(Box::zero(n));
    return z;
  }

  const Eigen::VectorXd r = w.radius();
  const Eigen::VectorXd c = w.center();
  const double wscale = std::max(r.lpNorm<Eigen::Infinity>(), c.lpNorm<Eigen::Infinity>());

  // find s with A^s W inside alpha W, alpha <= eps
  Eigen::MatrixXd a_pow = a_cl.a_cl;  // A^s with s starting at 1
  int s = -1;
  double alpha = 0.0;
  for (int k = 1; k <= max_terms; ++k) {
    double worst = 0.0;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      for (double sgn : {1.0, -1.0}) {
        Eigen::VectorXd d = sgn * Eigen::VectorXd::Unit(n, i);
        const double num = d.dot(a_pow * c) + (a_pow.transpose() * d).cwiseAbs().dot(r);
        const double den = d.dot(c) + r[i];
        if (den <= 1e-14 * std::max(1.0, wscale)) {
          if (num > 1e-12 * std::max(1.0, wscale)) {
            ok = false;
            break;
          }
          continue;
        }
        worst = std::max(worst, num / den);
      }
    }
    if (ok && worst <= eps) {
      s = k;
      alpha = worst;
      break;
    }
    a_pow = a_pow * a_cl.a_cl;
  }
  if (s < 0)
    throw std::runtime_error(
        "mrpi_approx: no finite sum satisfies the contraction test within the term cap "
        "(spectral radius too close to 1 for the requested eps)");

  const double scale = 1.0 / (1.0 - alpha);
  Eigen::MatrixXd gens(n, static_cast<Eigen::Index>(s) * n);
  Eigen::VectorXd center = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (int k = 0; k < s; ++k) {
    gens.middleCols(static_cast<Eigen::Index>(k) * n, n) = scale * m * r.asDiagonal();
    center += scale * m * c;
    m = a_cl.a_cl * m;
  }
  z.center = center;
  z.generators = detail::merge_generators(gens, 1e-12 * std::max(1.0, wscale));
  z.alpha = alpha;
  z.terms = s;
  z.poly = detail::zonotope_hrep(z.center, z.generators);
  return z;
}

// ---------------------------------------------------------------------------
// Pontryagin difference of a box by a set, facet-wise via support functions.

namespace detail {
inline Polytope box_minus_support(const Box& x, const std::function<double(const Eigen::VectorXd&)>& sup) {
  const int n = x.dim();
  Eigen::MatrixXd H(2 * n, n);
  Eigen::VectorXd h(2 * n);
  H.setZero();
  bool empty = x.empty;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd ei = Eigen::VectorXd::Unit(n, i);
    const double up = x.upper[i] - sup(ei);
    const double lo = x.lower[i] + sup(-ei);
    H(2 * i, i) = 1.0;
    h[2 * i] = up;
    H(2 * i + 1, i) = -1.0;
    h[2 * i + 1] = -lo;
    if (up < lo - 1e-12) empty = true;
  }
  Polytope p(std::move(H), std::move(h));
  p.empty = empty;
  return p;
}
}  // namespace detail

inline Polytope pontryagin_diff(const Box& x, const Polytope& z) {
  if (x.dim() != z.dim()) throw std::invalid_argument("pontryagin_diff: dimension mismatch");
  return detail::box_minus_support(x, [&](const Eigen::VectorXd& d) {
    const double s = polytope_support(z, d);
    if (!std::isfinite(s)) throw std::invalid_argument("pontryagin_diff: z must be bounded and nonempty");
    return s;
  });
}

inline Polytope pontryagin_diff(const Box& x, const Box& z) {
  if (x.dim() != z.dim()) throw std::invalid_argument("pontryagin_diff: dimension mismatch");
  return detail::box_minus_support(x, [&](const Eigen::VectorXd& d) { return z.support(d); });
}

inline Polytope pontryagin_diff(const Box& x, const MrpiSet& z) {
  if (x.dim() != z.dim()) throw std::invalid_argument("pontryagin_diff: dimension mismatch");
  return detail::box_minus_support(x, [&](const Eigen::VectorXd& d) { return z.support(d); });
}

// ---------------------------------------------------------------------------
// Maximal positively invariant set for s+ = sbar + a_cl (s - sbar) subject to
// s in x_tight and vbar + k_gain (s - sbar) in u_tight, by the standard
// fixed-point iteration with per-facet redundancy pruning.

struct TerminalSetResult {
  Polytope set;  // in the original s coordinates
  bool converged = false;
  int iterations = 0;
};

inline TerminalSetResult terminal_set(const ClosedLoopMatrix& a_cl, const Eigen::MatrixXd& k_gain,
                                      const Polytope& x_tight, const Polytope& u_tight,
                                      const Eigen::VectorXd& sbar_in = Eigen::VectorXd(),
                                      const Eigen::VectorXd& vbar_in = Eigen::VectorXd(),
                                      int cap = 200, double tol = 1e-9) {
  const int n = static_cast<int>(a_cl.a_cl.rows());
  const int m = static_cast<int>(k_gain.rows());
  Eigen::VectorXd sbar = sbar_in.size() ? sbar_in : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd vbar = vbar_in.size() ? vbar_in : Eigen::VectorXd::Zero(m);
  if (x_tight.empty || u_tight.empty)
    throw std::invalid_argument("terminal_set: tightened constraint set is empty");

  // base constraints in delta = s - sbar coordinates
  const Eigen::Index rx = x_tight.rows(), ru = u_tight.rows();
  Eigen::MatrixXd Hb(rx + ru, n);
  Eigen::VectorXd hb(rx + ru);
  Hb.topRows(rx) = x_tight.normals;
  hb.head(rx) = x_tight.offsets - x_tight.normals * sbar;
  Hb.bottomRows(ru) = u_tight.normals * k_gain;
  hb.tail(ru) = u_tight.offsets - u_tight.normals * vbar;
  // snap roundoff: a setpoint supplied exactly on a facet must stay feasible
  for (Eigen::Index i = 0; i < hb.size(); ++i)
    if (hb[i] < 0.0 && hb[i] >= -1e-8) hb[i] = 0.0;

  Polytope cur(Hb, hb);
  if (!polytope_nonempty(cur, tol)) {
    TerminalSetResult r;
    r.set = cur;
    r.set.empty = true;
    r.converged = true;
    return r;
  }

  Eigen::MatrixXd frontH = Hb;
  Eigen::VectorXd fronth = hb;
  TerminalSetResult res;
  for (int it = 0; it < cap; ++it) {
    Eigen::MatrixXd candH = frontH * a_cl.a_cl;
    std::vector<Eigen::Index> added;
    for (Eigen::Index i = 0; i < candH.rows(); ++i) {
      const Eigen::VectorXd d = candH.row(i).transpose();
      if (d.norm() < 1e-13) continue;
      const double sup = polytope_support(cur, d);
      if (sup > fronth[i] + tol) added.push_back(i);
    }
    if (added.empty()) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    Eigen::MatrixXd nH(cur.rows() + static_cast<Eigen::Index>(added.size()), n);
    Eigen::VectorXd nh(nH.rows());
    nH.topRows(cur.rows()) = cur.normals;
    nh.head(cur.rows()) = cur.offsets;
    Eigen::MatrixXd fH(static_cast<Eigen::Index>(added.size()), n);
    Eigen::VectorXd fh(fH.rows());
    for (size_t k = 0; k < added.size(); ++k) {
      nH.row(cur.rows() + static_cast<Eigen::Index>(k)) = candH.row(added[k]);
      nh[cur.rows() + static_cast<Eigen::Index>(k)] = fronth[added[k]];
      fH.row(static_cast<Eigen::Index>(k)) = candH.row(added[k]);
      fh[static_cast<Eigen::Index>(k)] = fronth[added[k]];
    }
    cur = Polytope(std::move(nH), std::move(nh));
    frontH = std::move(fH);
    fronth = std::move(fh);
    res.iterations = it + 1;
  }

  cur = remove_redundant(cur, tol);
  // shift back to s coordinates: H (s - sbar) <= h
  cur.offsets += cur.normals * sbar;
  res.set = std::move(cur);
  return res;
}

}  // namespace modr::geometry
