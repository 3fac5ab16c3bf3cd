#pragma once

// Minimal second-order cone programming layer: a program container, an
// expression-based builder, and an embedded homogeneous self-dual
// primal-dual interior-point solver (dense linear algebra, LP + SOC cones).
//
// Program form:
//   minimize    objective . x
//   subject to  eq_lhs * x == eq_rhs
//               ineq_lhs * x <= ineq_rhs
//               x[i] >= 0                 for i in nonneg_vars
//               || x[block.xs] ||_2 <= x[block.t]   for each soc block
//
// Programs can be dumped to a matrix-market-like text format via dump():
//   %%conic program
//   vars <n>
//   objective <idx>:<coef> ...
//   eq <rows>      followed by one "row idx:coef ... = rhs" line per row
//   ineq <rows>    same row syntax, meaning row . x <= rhs
//   nonneg <idx> ...
//   soc <blocks>   followed by "t : x1 x2 ..." per block
// Only nonzero coefficients are written; indices are zero-based.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace modr::conic {

struct SocBlock {
  int t = -1;               // epigraph variable index
  std::vector<int> xs;      // norm argument variable indices
};

struct ConicProgram {
  Eigen::VectorXd objective;
  Eigen::MatrixXd eq_lhs;    // may have zero rows
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_lhs;  // may have zero rows
  Eigen::VectorXd ineq_rhs;
  std::vector<int> nonneg_vars;
  std::vector<SocBlock> soc_blocks;

  int num_vars() const { return static_cast<int>(objective.size()); }

  void validate() const {
    const int n = num_vars();
    if (n <= 0) throw std::invalid_argument("conic: empty program");
    if (eq_lhs.rows() != eq_rhs.size() || (eq_lhs.rows() > 0 && eq_lhs.cols() != n))
      throw std::invalid_argument("conic: equality block shape mismatch");
    if (ineq_lhs.rows() != ineq_rhs.size() || (ineq_lhs.rows() > 0 && ineq_lhs.cols() != n))
      throw std::invalid_argument("conic: inequality block shape mismatch");
    for (int i : nonneg_vars)
      if (i < 0 || i >= n) throw std::invalid_argument("conic: nonneg index out of range");
    for (const auto& b : soc_blocks) {
      if (b.t < 0 || b.t >= n) throw std::invalid_argument("conic: soc t index out of range");
      if (b.xs.empty()) throw std::invalid_argument("conic: empty soc block");
      for (int i : b.xs)
        if (i < 0 || i >= n) throw std::invalid_argument("conic: soc index out of range");
    }
    if (nonneg_vars.empty() && soc_blocks.empty() && ineq_lhs.rows() == 0)
      throw std::invalid_argument("conic: program has no cone constraints");
  }

  std::string dump() const;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "?";
}

struct ConicSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double eq_residual = std::numeric_limits<double>::quiet_NaN();
  double cone_violation = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

// ---------------------------------------------------------------------------
// Affine expressions and a builder that lowers them onto ConicProgram fields.

struct LinExpr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  LinExpr() = default;
  /*implicit*/ LinExpr(double c) : constant(c) {}

  static LinExpr var(int idx, double coef = 1.0) {
    LinExpr e;
    e.terms.emplace_back(idx, coef);
    return e;
  }
  LinExpr& add(int idx, double coef) {
    if (coef != 0.0) terms.emplace_back(idx, coef);
    return *this;
  }
  LinExpr& operator+=(const LinExpr& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
  }
  LinExpr operator-() const {
    LinExpr e(*this);
    for (auto& t : e.terms) t.second = -t.second;
    e.constant = -e.constant;
    return e;
  }
  bool is_bare_var() const {
    return terms.size() == 1 && terms[0].second == 1.0 && constant == 0.0;
  }
};

inline LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
inline LinExpr operator-(LinExpr a, const LinExpr& b) { return a += (-b); }
inline LinExpr operator*(double k, LinExpr a) {
  for (auto& t : a.terms) t.second *= k;
  a.constant *= k;
  return a;
}

class ProgramBuilder {
 public:
  int new_var() { return nvars_++; }
  std::vector<int> new_vars(int k) {
    std::vector<int> v(static_cast<size_t>(k));
    for (auto& i : v) i = new_var();
    return v;
  }

  void minimize(const LinExpr& e) { objective_ = e; }

  // expr == 0
  void add_eq(const LinExpr& e) { eqs_.push_back(e); }
  // expr <= 0
  void add_le(const LinExpr& e) { ineqs_.push_back(e); }
  void add_nonneg(int var) { nonneg_.push_back(var); }
  // ||entries||_2 <= rhs
  void add_soc(const LinExpr& rhs, const std::vector<LinExpr>& entries) {
    SocBlock b;
    b.t = as_var(rhs);
    b.xs.reserve(entries.size());
    for (const auto& e : entries) b.xs.push_back(as_var(e));
    socs_.push_back(std::move(b));
  }

  ConicProgram build() const {
    ConicProgram p;
    p.objective = Eigen::VectorXd::Zero(nvars_);
    for (auto [i, c] : objective_.terms) p.objective[i] += c;
    p.eq_lhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(eqs_.size()), nvars_);
    p.eq_rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(eqs_.size()));
    for (size_t r = 0; r < eqs_.size(); ++r) {
      for (auto [i, c] : eqs_[r].terms) p.eq_lhs(static_cast<Eigen::Index>(r), i) += c;
      p.eq_rhs[static_cast<Eigen::Index>(r)] = -eqs_[r].constant;
    }
    p.ineq_lhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ineqs_.size()), nvars_);
    p.ineq_rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ineqs_.size()));
    for (size_t r = 0; r < ineqs_.size(); ++r) {
      for (auto [i, c] : ineqs_[r].terms) p.ineq_lhs(static_cast<Eigen::Index>(r), i) += c;
      p.ineq_rhs[static_cast<Eigen::Index>(r)] = -ineqs_[r].constant;
    }
    p.nonneg_vars = nonneg_;
    p.soc_blocks = socs_;
    return p;
  }

  int num_vars() const { return nvars_; }

 private:
  // Returns a variable index equal to the expression, introducing an
  // auxiliary variable and equality when the expression is not a bare var.
  int as_var(const LinExpr& e) {
    if (e.is_bare_var()) return e.terms[0].first;
    const int v = new_var();
    LinExpr eq = e;
    eq.add(v, -1.0);
    eqs_.push_back(std::move(eq));
    return v;
  }

  int nvars_ = 0;
  LinExpr objective_;
  std::vector<LinExpr> eqs_, ineqs_;
  std::vector<int> nonneg_;
  std::vector<SocBlock> socs_;
};

// ---------------------------------------------------------------------------
// Solver internals.

namespace detail {

// Cone layout of the lowered slack vector: [lp block | soc blocks...].
struct ConeLayout {
  int lp = 0;                 // leading nonnegative dimensions
  std::vector<int> soc;       // dims of each soc cone (>= 2)
  int dim() const {
    int d = lp;
    for (int q : soc) d += q;
    return d;
  }
  int degree() const { return lp + static_cast<int>(soc.size()); }
};

// Per-cone Nesterov-Todd scaling. LP part stores w = sqrt(s/z) elementwise;
// each SOC block stores eta and the normalized point wbar with wbar'J wbar = 1.
struct Scaling {
  Eigen::VectorXd w_lp;
  struct Soc {
    double eta = 1.0;
    Eigen::VectorXd wbar;
  };
  std::vector<Soc> soc;
};

inline double soc_residual(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v[0] * v[0] - v.tail(v.size() - 1).squaredNorm();
}

// H(w) x for H(w) = [w0 w1'; w1 I + w1 w1'/(1+w0)].
inline Eigen::VectorXd soc_h_apply(const Eigen::VectorXd& w, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index d = x.size();
  Eigen::VectorXd r(d);
  const double w0 = w[0];
  const auto w1 = w.tail(d - 1);
  const auto x1 = x.tail(d - 1);
  const double dot = w1.dot(x1);
  r[0] = w0 * x[0] + dot;
  r.tail(d - 1) = x[0] * w1 + x1 + (dot / (1.0 + w0)) * w1;
  return r;
}

inline bool compute_scaling(const ConeLayout& K, const Eigen::VectorXd& s, const Eigen::VectorXd& z,
                            Scaling& W, Eigen::VectorXd& lambda) {
  W.w_lp.resize(K.lp);
  lambda.resize(K.dim());
  for (int i = 0; i < K.lp; ++i) {
    if (s[i] <= 0.0 || z[i] <= 0.0) return false;
    W.w_lp[i] = std::sqrt(s[i] / z[i]);
    lambda[i] = std::sqrt(s[i] * z[i]);
  }
  W.soc.assign(K.soc.size(), {});
  int off = K.lp;
  for (size_t k = 0; k < K.soc.size(); ++k) {
    const int d = K.soc[k];
    const auto sk = s.segment(off, d);
    const auto zk = z.segment(off, d);
    const double sres = soc_residual(sk);
    const double zres = soc_residual(zk);
    if (sres <= 0.0 || zres <= 0.0 || sk[0] <= 0.0 || zk[0] <= 0.0) return false;
    const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
    Eigen::VectorXd sbar = sk / snorm, zbar = zk / znorm;
    const double gamma = std::sqrt((1.0 + sbar.dot(zbar)) / 2.0);
    Eigen::VectorXd wbar(d);
    wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
    wbar.tail(d - 1) = (sbar.tail(d - 1) - zbar.tail(d - 1)) / (2.0 * gamma);
    auto& blk = W.soc[k];
    blk.eta = std::sqrt(snorm / znorm);
    blk.wbar = wbar;
    // lambda = W z = eta * H(wbar) z
    lambda.segment(off, d) = blk.eta * soc_h_apply(wbar, zk);
    off += d;
  }
  return true;
}

inline Eigen::VectorXd apply_w(const ConeLayout& K, const Scaling& W, const Eigen::VectorXd& x) {
  Eigen::VectorXd r(x.size());
  r.head(K.lp) = W.w_lp.cwiseProduct(x.head(K.lp));
  int off = K.lp;
  for (size_t k = 0; k < K.soc.size(); ++k) {
    const int d = K.soc[k];
    r.segment(off, d) = W.soc[k].eta * soc_h_apply(W.soc[k].wbar, x.segment(off, d));
    off += d;
  }
  return r;
}

inline Eigen::VectorXd apply_winv(const ConeLayout& K, const Scaling& W, const Eigen::VectorXd& x) {
  Eigen::VectorXd r(x.size());
  r.head(K.lp) = x.head(K.lp).cwiseQuotient(W.w_lp);
  int off = K.lp;
  for (size_t k = 0; k < K.soc.size(); ++k) {
    const int d = K.soc[k];
    // W^-1 = (1/eta) H(J wbar)
    Eigen::VectorXd jw = W.soc[k].wbar;
    jw.tail(d - 1) = -jw.tail(d - 1);
    r.segment(off, d) = soc_h_apply(jw, x.segment(off, d)) / W.soc[k].eta;
    off += d;
  }
  return r;
}

// W^-2 x: LP 1/w^2, SOC (1/eta^2) (2 (J wbar)(J wbar)' - J) x.
inline Eigen::VectorXd apply_w2inv(const ConeLayout& K, const Scaling& W, const Eigen::VectorXd& x) {
  Eigen::VectorXd r(x.size());
  r.head(K.lp) = x.head(K.lp).cwiseQuotient(W.w_lp.cwiseAbs2());
  int off = K.lp;
  for (size_t k = 0; k < K.soc.size(); ++k) {
    const int d = K.soc[k];
    Eigen::VectorXd jw = W.soc[k].wbar;
    jw.tail(d - 1) = -jw.tail(d - 1);
    const auto xk = x.segment(off, d);
    Eigen::VectorXd jx = xk;
    jx.tail(d - 1) = -jx.tail(d - 1);
    r.segment(off, d) = (2.0 * jw.dot(xk) * jw - jx) / (W.soc[k].eta * W.soc[k].eta);
    off += d;
  }
  return r;
}

// Jordan product u o v.
inline Eigen::VectorXd jordan_mul(const ConeLayout& K, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  Eigen::VectorXd r(u.size());
  r.head(K.lp) = u.head(K.lp).cwiseProduct(v.head(K.lp));
  int off = K.lp;
  for (int d : K.soc) {
    const auto uk = u.segment(off, d);
    const auto vk = v.segment(off, d);
    r[off] = uk.dot(vk);
    r.segment(off + 1, d - 1) = uk[0] * vk.segment(1, d - 1) + vk[0] * uk.segment(1, d - 1);
    off += d;
  }
  return r;
}

// Solve lambda o u = v for u.
inline Eigen::VectorXd jordan_div(const ConeLayout& K, const Eigen::VectorXd& lambda, const Eigen::VectorXd& v) {
  Eigen::VectorXd r(v.size());
  r.head(K.lp) = v.head(K.lp).cwiseQuotient(lambda.head(K.lp));
  int off = K.lp;
  for (int d : K.soc) {
    const double a = lambda[off];
    const auto b = lambda.segment(off + 1, d - 1);
    const double den = a * a - b.squaredNorm();
    const double u0 = (a * v[off] - b.dot(v.segment(off + 1, d - 1))) / den;
    r[off] = u0;
    r.segment(off + 1, d - 1) = (v.segment(off + 1, d - 1) - u0 * b) / a;
    off += d;
  }
  return r;
}

inline Eigen::VectorXd cone_identity(const ConeLayout& K) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(K.dim());
  e.head(K.lp).setOnes();
  int off = K.lp;
  for (int d : K.soc) {
    e[off] = 1.0;
    off += d;
  }
  return e;
}

// Smallest cone-eigenvalue of v (LP: min component; SOC: v0 - |v1|).
inline double min_eig(const ConeLayout& K, const Eigen::VectorXd& v) {
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < K.lp; ++i) m = std::min(m, v[i]);
  int off = K.lp;
  for (int d : K.soc) {
    m = std::min(m, v[off] - v.segment(off + 1, d - 1).norm());
    off += d;
  }
  return m;
}

// Largest step a >= 0 with v + a*dv in the cone (may be +inf).
inline double max_step(const ConeLayout& K, const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double amax = std::numeric_limits<double>::infinity();
  for (int i = 0; i < K.lp; ++i)
    if (dv[i] < 0.0) amax = std::min(amax, -v[i] / dv[i]);
  int off = K.lp;
  for (int d : K.soc) {
    const auto v1 = v.segment(off + 1, d - 1);
    const auto d1 = dv.segment(off + 1, d - 1);
    const double a = dv[off] * dv[off] - d1.squaredNorm();
    const double b = 2.0 * (v[off] * dv[off] - v1.dot(d1));
    const double c = v[off] * v[off] - v1.squaredNorm();
    // roots of a t^2 + b t + c = 0 with c > 0 at an interior point
    double root = std::numeric_limits<double>::infinity();
    const double disc = b * b - 4.0 * a * c;
    if (std::abs(a) < 1e-14) {
      if (b < 0.0) root = -c / b;
    } else if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      const double r1 = (-b - sq) / (2.0 * a);
      const double r2 = (-b + sq) / (2.0 * a);
      for (double r : {r1, r2})
        if (r > 0.0) root = std::min(root, r);
      if (a < 0.0 && root == std::numeric_limits<double>::infinity()) root = 0.0;
    }
    if (dv[off] < 0.0) root = std::min(root, -v[off] / dv[off]);
    amax = std::min(amax, root);
    off += d;
  }
  return amax;
}

// Factorization of the reduced KKT system
//   [H   A'] [dx]   [rx]          H = G' W^-2 G + delta I
//   [A  -dI] [dy] = [ry]
// (quasi-definite, solved by dense LU) with iterative refinement against the
// full 3x3 system  [0 A' G'; A 0 0; G 0 -W^2].
struct KktSolver {
  const Eigen::MatrixXd& A;
  const Eigen::MatrixXd& G;
  const ConeLayout& K;
  double delta;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  const Scaling* W = nullptr;

  KktSolver(const Eigen::MatrixXd& A_, const Eigen::MatrixXd& G_, const ConeLayout& K_, double delta_)
      : A(A_), G(G_), K(K_), delta(delta_) {}

  bool factor(const Scaling& Wc) {
    W = &Wc;
    const Eigen::Index nx = G.cols(), ny = A.rows();
    Eigen::MatrixXd Gs(G.rows(), nx);  // W^-1 G
    for (Eigen::Index j = 0; j < nx; ++j) Gs.col(j) = apply_winv(K, Wc, G.col(j));
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nx + ny, nx + ny);
    M.topLeftCorner(nx, nx).noalias() = Gs.transpose() * Gs;
    M.topLeftCorner(nx, nx).diagonal().array() += delta;
    if (ny > 0) {
      M.topRightCorner(nx, ny) = A.transpose();
      M.bottomLeftCorner(ny, nx) = A;
      M.bottomRightCorner(ny, ny).diagonal().array() -= delta;
    }
    lu.compute(M);
    return M.allFinite();
  }

  // Solve [0 A' G'; A 0 0; G 0 -W^2] [dx;dy;dz] = [rx;ry;rz].
  // Returns false when the factors are too ill-conditioned to produce a
  // finite, refined solution.
  bool solve(const Eigen::VectorXd& rx, const Eigen::VectorXd& ry, const Eigen::VectorXd& rz,
             Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& dz) const {
    solve_once(rx, ry, rz, dx, dy, dz);
    if (!dx.allFinite() || !dz.allFinite() || (dy.size() && !dy.allFinite())) return false;
    const double rhs_scale = 1.0 + std::max({rx.lpNorm<Eigen::Infinity>(),
                                             ry.size() ? ry.lpNorm<Eigen::Infinity>() : 0.0,
                                             rz.lpNorm<Eigen::Infinity>()});
    Eigen::VectorXd ex, ey, ez, cx, cy, cz;
    for (int pass = 0; pass < 3; ++pass) {
      residual(rx, ry, rz, dx, dy, dz, ex, ey, ez);
      const double r = std::max({ex.lpNorm<Eigen::Infinity>(),
                                 ey.size() ? ey.lpNorm<Eigen::Infinity>() : 0.0,
                                 ez.lpNorm<Eigen::Infinity>()});
      if (r <= 1e-13 * rhs_scale) break;
      solve_once(ex, ey, ez, cx, cy, cz);
      if (!cx.allFinite() || !cz.allFinite() || (cy.size() && !cy.allFinite())) return false;
      dx += cx;
      if (dy.size()) dy += cy;
      dz += cz;
    }
    return dx.allFinite() && dz.allFinite();
  }

 private:
  void residual(const Eigen::VectorXd& rx, const Eigen::VectorXd& ry, const Eigen::VectorXd& rz,
                const Eigen::VectorXd& dx, const Eigen::VectorXd& dy, const Eigen::VectorXd& dz,
                Eigen::VectorXd& ex, Eigen::VectorXd& ey, Eigen::VectorXd& ez) const {
    ex = rx - G.transpose() * dz;
    if (A.rows() > 0) ex -= A.transpose() * dy;
    ey = ry;
    if (A.rows() > 0) ey -= A * dx;
    Eigen::VectorXd w2dz = apply_w(K, *W, apply_w(K, *W, dz));
    ez = rz - (G * dx - w2dz);
  }

  void solve_once(const Eigen::VectorXd& rx, const Eigen::VectorXd& ry, const Eigen::VectorXd& rz,
                  Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& dz) const {
    const Eigen::Index nx = G.cols(), ny = A.rows();
    Eigen::VectorXd rhs(nx + ny);
    rhs.head(nx) = rx + G.transpose() * apply_w2inv(K, *W, rz);
    if (ny > 0) rhs.tail(ny) = ry;
    Eigen::VectorXd sol = lu.solve(rhs);
    dx = sol.head(nx);
    dy = sol.tail(ny);
    dz = apply_w2inv(K, *W, G * dx - rz);
  }
};

struct EcosForm {
  Eigen::VectorXd c, b, h;
  Eigen::MatrixXd A, G;
  ConeLayout K;
};

inline double F1_cert(const EcosForm& f, const Eigen::VectorXd& y, const Eigen::VectorXd& z) {
  Eigen::VectorXd r = f.G.transpose() * z;
  if (f.A.rows() > 0) r += f.A.transpose() * y;
  return r.lpNorm<Eigen::Infinity>();
}

inline EcosForm lower(const ConicProgram& p) {
  EcosForm f;
  const int n = p.num_vars();
  const Eigen::Index n_ineq = p.ineq_lhs.rows();
  const Eigen::Index n_nn = static_cast<Eigen::Index>(p.nonneg_vars.size());
  f.K.lp = static_cast<int>(n_ineq + n_nn);
  Eigen::Index cone_dim = n_ineq + n_nn;
  for (const auto& blk : p.soc_blocks) {
    f.K.soc.push_back(1 + static_cast<int>(blk.xs.size()));
    cone_dim += 1 + static_cast<Eigen::Index>(blk.xs.size());
  }
  f.c = p.objective;
  f.A = p.eq_lhs;
  f.b = p.eq_rhs;
  f.G = Eigen::MatrixXd::Zero(cone_dim, n);
  f.h = Eigen::VectorXd::Zero(cone_dim);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n_ineq; ++i, ++r) {
    f.G.row(r) = p.ineq_lhs.row(i);
    f.h[r] = p.ineq_rhs[i];
  }
  for (int v : p.nonneg_vars) {
    f.G(r, v) = -1.0;
    ++r;
  }
  for (const auto& blk : p.soc_blocks) {
    f.G(r, blk.t) = -1.0;
    ++r;
    for (int v : blk.xs) {
      f.G(r, v) = -1.0;
      ++r;
    }
  }
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline ConicSolution solve_socp(const ConicProgram& prog, double tol = 1e-8) {
  using namespace detail;
  prog.validate();
  ConicSolution out;
  EcosForm f = lower(prog);
  const Eigen::Index nx = f.c.size(), ny = f.A.rows(), nk = f.G.rows();
  const int max_iters = 100;
  const double reg = 1e-8;

  KktSolver kkt(f.A, f.G, f.K, reg);
  Scaling W;
  W.w_lp = Eigen::VectorXd::Ones(f.K.lp);
  W.soc.resize(f.K.soc.size());
  {
    int i = 0;
    for (int d : f.K.soc) {
      W.soc[static_cast<size_t>(i)].eta = 1.0;
      W.soc[static_cast<size_t>(i)].wbar = Eigen::VectorXd::Zero(d);
      W.soc[static_cast<size_t>(i)].wbar[0] = 1.0;
      ++i;
    }
  }
  if (!kkt.factor(W)) {
    out.status = SolveStatus::NumericalFailure;
    return out;
  }

  // ECOS-style initialization from two solves with identity scaling.
  Eigen::VectorXd x(nx), y(ny), s(nk), z(nk);
  {
    Eigen::VectorXd dx, dy, dz;
    if (!kkt.solve(Eigen::VectorXd::Zero(nx), f.b, f.h, dx, dy, dz)) {
      out.status = SolveStatus::NumericalFailure;
      return out;
    }
    x = dx;
    Eigen::VectorXd st = -dz;  // s-candidate = h - G x
    const double ms = min_eig(f.K, st);
    s = (ms <= 0.0) ? (st + (1.0 - ms) * cone_identity(f.K)).eval() : st;

    if (!kkt.solve(-f.c, Eigen::VectorXd::Zero(ny), Eigen::VectorXd::Zero(nk), dx, dy, dz)) {
      out.status = SolveStatus::NumericalFailure;
      return out;
    }
    y = dy;
    const double mz = min_eig(f.K, dz);
    z = (mz <= 0.0) ? (dz + (1.0 - mz) * cone_identity(f.K)).eval() : dz;
  }
  double tau = 1.0, kappa = 1.0;

  const double normb = std::max(1.0, f.b.size() ? f.b.lpNorm<Eigen::Infinity>() : 0.0);
  const double normh = std::max(1.0, f.h.lpNorm<Eigen::Infinity>());
  const double normc = std::max(1.0, f.c.lpNorm<Eigen::Infinity>());
  const int degree = f.K.degree();

  Eigen::VectorXd lambda;
  auto finish_optimal = [&](int iters) {
    out.status = SolveStatus::Optimal;
    out.x = x / tau;
    out.objective = f.c.dot(out.x);
    out.iterations = iters;
    out.eq_residual = ny ? (f.A * out.x - f.b).lpNorm<Eigen::Infinity>() : 0.0;
    double viol = 0.0;
    Eigen::VectorXd slack = f.h - f.G * out.x;
    for (int i = 0; i < f.K.lp; ++i) viol = std::max(viol, -slack[i]);
    int off = f.K.lp;
    for (int d : f.K.soc) {
      viol = std::max(viol, slack.segment(off + 1, d - 1).norm() - slack[off]);
      off += d;
    }
    out.cone_violation = viol;
  };

  // Best iterate seen so far, by feasibility-then-gap merit; stalls return it.
  Eigen::VectorXd best_x = x, best_y = y, best_z = z, best_s = s;
  double best_tau = tau, best_kappa = kappa;
  double best_merit = std::numeric_limits<double>::infinity();

  // Accepts the best stalled iterate at a mildly relaxed tolerance.
  auto loose_accept = [&](int iters) -> bool {
    x = best_x;
    y = best_y;
    z = best_z;
    s = best_s;
    tau = best_tau;
    kappa = best_kappa;
    if (!(tau > 1e-10) || !x.allFinite()) return false;
    Eigen::VectorXd F1 = f.G.transpose() * z + f.c * tau;
    if (ny > 0) F1 += f.A.transpose() * y;
    const double pres = std::max(ny ? (f.A * x - f.b * tau).lpNorm<Eigen::Infinity>() / normb : 0.0,
                                 (f.G * x + s - f.h * tau).lpNorm<Eigen::Infinity>() / normh) / tau;
    const double dres = F1.lpNorm<Eigen::Infinity>() / normc / tau;
    const double gap = s.dot(z) / (tau * tau);
    const double pcost = f.c.dot(x) / tau;
    if (pres <= 100 * tol && dres <= 100 * tol &&
        gap <= std::sqrt(tol) * std::max(1.0, std::abs(pcost))) {
      finish_optimal(iters);
      return true;
    }
    return false;
  };

  for (int iter = 0; iter < max_iters; ++iter) {
    // residuals of the homogeneous embedding
    Eigen::VectorXd F1 = f.G.transpose() * z + f.c * tau;
    if (ny > 0) F1 += f.A.transpose() * y;
    Eigen::VectorXd F2 = ny ? (f.A * x - f.b * tau).eval() : Eigen::VectorXd();
    Eigen::VectorXd F3 = f.G * x + s - f.h * tau;
    const double F4 = f.c.dot(x) + (ny ? f.b.dot(y) : 0.0) + f.h.dot(z) + kappa;
    const double mu = (s.dot(z) + tau * kappa) / (degree + 1);

    // convergence on the scaled iterate
    const double pres = std::max(ny ? F2.lpNorm<Eigen::Infinity>() / normb : 0.0,
                                 F3.lpNorm<Eigen::Infinity>() / normh) / tau;
    const double dres = F1.lpNorm<Eigen::Infinity>() / normc / tau;
    const double gap = s.dot(z) / (tau * tau);
    const double pcost = f.c.dot(x) / tau;
    const double dcost = -((ny ? f.b.dot(y) : 0.0) + f.h.dot(z)) / tau;
    const double relgap = gap / std::max(1.0, std::min(std::abs(pcost), std::abs(dcost)));
#ifdef MODR_CONIC_TRACE
    std::fprintf(stderr, "it %2d pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e mu %.2e\n", iter,
                 pres, dres, gap, tau, kappa, mu);
#endif
    if (pres <= tol && dres <= tol && (gap <= tol || relgap <= tol)) {
      finish_optimal(iter);
      return out;
    }
    const double merit = std::max(pres, dres) + gap / std::max(1.0, std::abs(pcost));
    if (merit < best_merit) {
      best_merit = merit;
      best_x = x;
      best_y = y;
      best_z = z;
      best_s = s;
      best_tau = tau;
      best_kappa = kappa;
    }
    // infeasibility certificates
    const double byhz = (ny ? f.b.dot(y) : 0.0) + f.h.dot(z);
    if (byhz < -1e-12) {
      const double infres = F1_cert(f, y, z) / (-byhz);
      if (infres <= tol * 0.5) {
        out.status = SolveStatus::Infeasible;
        out.iterations = iter;
        return out;
      }
    }
    const double cx = f.c.dot(x);
    if (cx < -1e-12) {
      double r = (f.G * x + s).lpNorm<Eigen::Infinity>();
      if (ny > 0) r = std::max(r, (f.A * x).lpNorm<Eigen::Infinity>());
      if (r / (-cx) <= tol * 0.5) {
        out.status = SolveStatus::Unbounded;
        out.iterations = iter;
        return out;
      }
    }

    if (!compute_scaling(f.K, s, z, W, lambda) || !kkt.factor(W)) {
      if (loose_accept(iter)) return out;
      out.status = SolveStatus::NumericalFailure;
      out.iterations = iter;
      return out;
    }

    Eigen::VectorXd vx, vy, vz;
    bool solves_ok = kkt.solve(-f.c, f.b, f.h, vx, vy, vz);
    const double dt_den =
        solves_ok ? f.c.dot(vx) + (ny ? f.b.dot(vy) : 0.0) + f.h.dot(vz) - kappa / tau : 0.0;
    if (!solves_ok || !std::isfinite(dt_den) || std::abs(dt_den) < 1e-300) {
      if (loose_accept(iter)) return out;
      out.status = SolveStatus::NumericalFailure;
      out.iterations = iter;
      return out;
    }

    auto direction = [&](double one_minus_sigma, const Eigen::VectorXd& ds_target, double dkappa_target,
                         Eigen::VectorXd& Dx, Eigen::VectorXd& Dy, Eigen::VectorXd& Dz,
                         Eigen::VectorXd& Ds, double& Dtau, double& Dkappa) -> bool {
      // M u = [-(1-sig) F1; -(1-sig) F2; -(1-sig) F3 - W(lambda \ ds_target)]
      Eigen::VectorXd wld = apply_w(f.K, W, jordan_div(f.K, lambda, ds_target));
      Eigen::VectorXd ux, uy, uz;
      if (!kkt.solve(-one_minus_sigma * F1, ny ? (-one_minus_sigma * F2).eval() : Eigen::VectorXd(),
                     -one_minus_sigma * F3 - wld, ux, uy, uz))
        return false;
      const double num = -one_minus_sigma * F4 - f.c.dot(ux) - (ny ? f.b.dot(uy) : 0.0) -
                         f.h.dot(uz) - dkappa_target / tau;
      Dtau = num / dt_den;
      Dx = ux + Dtau * vx;
      if (ny > 0) Dy = uy + Dtau * vy; else Dy.resize(0);
      Dz = uz + Dtau * vz;
      Ds = wld - apply_w(f.K, W, apply_w(f.K, W, Dz));
      Dkappa = (dkappa_target - kappa * Dtau) / tau;
      return std::isfinite(Dtau) && Dx.allFinite() && Dz.allFinite() && Ds.allFinite();
    };

    // affine direction
    Eigen::VectorXd dxa, dya, dza, dsa;
    double dtaua, dkappaa;
    Eigen::VectorXd ll = jordan_mul(f.K, lambda, lambda);
    bool ok = direction(1.0, (-ll).eval(), -tau * kappa, dxa, dya, dza, dsa, dtaua, dkappaa);

    double sigma = 0.5;
    Eigen::VectorXd ds_t;
    double dk_t;
    if (ok) {
      double alpha_aff = std::min(1.0, max_step(f.K, s, dsa));
      alpha_aff = std::min(alpha_aff, max_step(f.K, z, dza));
      if (dtaua < 0.0) alpha_aff = std::min(alpha_aff, -tau / dtaua);
      if (dkappaa < 0.0) alpha_aff = std::min(alpha_aff, -kappa / dkappaa);
      sigma = std::clamp(std::pow(1.0 - alpha_aff, 3.0), 0.0, 1.0);
      Eigen::VectorXd ws = apply_winv(f.K, W, dsa);
      Eigen::VectorXd wz = apply_w(f.K, W, dza);
      ds_t = -ll - jordan_mul(f.K, ws, wz) + sigma * mu * cone_identity(f.K);
      dk_t = -tau * kappa - dtaua * dkappaa + sigma * mu;
    } else {
      // fall back to a pure centering step
      ds_t = -ll + sigma * mu * cone_identity(f.K);
      dk_t = -tau * kappa + sigma * mu;
    }

    Eigen::VectorXd dx, dy, dz, ds;
    double dtau, dkappa;
    if (!direction(1.0 - sigma, ds_t, dk_t, dx, dy, dz, ds, dtau, dkappa)) {
      if (loose_accept(iter)) return out;
      out.status = SolveStatus::NumericalFailure;
      out.iterations = iter;
      return out;
    }

    double alpha = std::min(1.0, max_step(f.K, s, ds));
    alpha = std::min(alpha, max_step(f.K, z, dz));
    if (dtau < 0.0) alpha = std::min(alpha, -tau / dtau);
    if (dkappa < 0.0) alpha = std::min(alpha, -kappa / dkappa);
    alpha *= 0.98;
    if (!(alpha > 1e-12)) {
      if (loose_accept(iter)) return out;
      out.status = SolveStatus::NumericalFailure;
      out.iterations = iter;
      return out;
    }
    x += alpha * dx;
    if (ny > 0) y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
    tau += alpha * dtau;
    kappa += alpha * dkappa;
  }

  if (loose_accept(max_iters)) return out;
  out.status = SolveStatus::NumericalFailure;
  out.iterations = max_iters;
  return out;
}

inline std::string ConicProgram::dump() const {
  std::ostringstream os;
  os.precision(17);
  const int n = num_vars();
  os << "%%conic program\n";
  os << "vars " << n << "\n";
  os << "objective";
  for (int i = 0; i < n; ++i)
    if (objective[i] != 0.0) os << " " << i << ":" << objective[i];
  os << "\n";
  auto block = [&](const char* name, const Eigen::MatrixXd& M, const Eigen::VectorXd& r) {
    os << name << " " << M.rows() << "\n";
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      os << i;
      for (Eigen::Index j = 0; j < M.cols(); ++j)
        if (M(i, j) != 0.0) os << " " << j << ":" << M(i, j);
      os << " = " << r[i] << "\n";
    }
  };
  block("eq", eq_lhs, eq_rhs);
  block("ineq", ineq_lhs, ineq_rhs);
  os << "nonneg";
  for (int i : nonneg_vars) os << " " << i;
  os << "\nsoc " << soc_blocks.size() << "\n";
  for (const auto& b : soc_blocks) {
    os << b.t << " :";
    for (int i : b.xs) os << " " << i;
    os << "\n";
  }
  return os.str();
}

}  // namespace modr::conic
