#pragma once

// Exact Gaussian process regression with a squared-exponential kernel.
// Experts keep a Cholesky factor of K + sigma_n^2 I that supports O(n^2)
// point insertion and removal, which the mixture trainer leans on heavily.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace modr::gp {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

struct KernelParams {
  Eigen::VectorXd lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 1.0;

  void validate() const {
    if (lengthscales.size() == 0 || (lengthscales.array() <= 0.0).any())
      throw std::invalid_argument("KernelParams: lengthscales must be positive");
    if (!(signal_variance > 0.0) || noise_variance < 0.0)
      throw std::invalid_argument("KernelParams: bad variances");
  }
  static KernelParams iso(int dim, double ell, double sig_var, double noise_var) {
    KernelParams kp;
    kp.lengthscales = Eigen::VectorXd::Constant(dim, ell);
    kp.signal_variance = sig_var;
    kp.noise_variance = noise_var;
    return kp;
  }
};

inline double se_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelParams& kp) {
  double q = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) / kp.lengthscales[i];
    q += d * d;
  }
  return kp.signal_variance * std::exp(-0.5 * q);
}

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;  // latent variance, no observation noise
};

namespace detail {

// Rank-one update L <- chol(L L' + v v'), in place.
inline void chol_update(Eigen::MatrixXd& L, Eigen::VectorXd v) {
  const Eigen::Index n = L.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double r = std::hypot(L(k, k), v[k]);
    const double c = r / L(k, k);
    const double s = v[k] / L(k, k);
    L(k, k) = r;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      L(i, k) = (L(i, k) + s * v[i]) / c;
      v[i] = c * v[i] - s * L(i, k);
    }
  }
}

}  // namespace detail

class GpExpert {
 public:
  GpExpert(int input_dim, KernelParams kp) : input_dim_(input_dim), kp_(std::move(kp)) {
    kp_.validate();
    z_.resize(0, input_dim);
    y_.resize(0);
    L_.resize(0, 0);
  }

  int size() const { return static_cast<int>(y_.size()); }
  int input_dim() const { return input_dim_; }
  const KernelParams& params() const { return kp_; }
  const Eigen::MatrixXd& inputs() const { return z_; }
  const Eigen::VectorXd& targets() const { return y_; }

  void add_point(const Eigen::VectorXd& z, double y) {
    const Eigen::Index n = y_.size();
    Eigen::VectorXd kv(n);
    for (Eigen::Index i = 0; i < n; ++i) kv[i] = se_kernel(z_.row(i).transpose(), z, kp_);
    const double kss = kp_.signal_variance + kp_.noise_variance;
    z_.conservativeResize(n + 1, Eigen::NoChange);
    z_.row(n) = z.transpose();
    y_.conservativeResize(n + 1);
    y_[n] = y;
    L_.conservativeResize(n + 1, n + 1);
    if (n > 0) {
      Eigen::VectorXd l = L_.topLeftCorner(n, n).triangularView<Eigen::Lower>().solve(kv);
      L_.block(n, 0, 1, n) = l.transpose();
      L_.block(0, n, n, 1).setZero();
      L_(n, n) = std::sqrt(std::max(kss - l.squaredNorm(), 1e-12));
    } else {
      L_(0, 0) = std::sqrt(kss);
    }
    alpha_dirty_ = true;
  }

  void remove_point(int idx) {
    const Eigen::Index n = y_.size();
    if (idx < 0 || idx >= n) throw std::out_of_range("GpExpert::remove_point");
    const Eigen::Index tail = n - idx - 1;
    if (tail > 0) {
      Eigen::VectorXd l32 = L_.block(idx + 1, idx, tail, 1);
      Eigen::MatrixXd L33 = L_.block(idx + 1, idx + 1, tail, tail);
      detail::chol_update(L33, l32);
      // shift rows/cols up-left
      Eigen::MatrixXd L31 = L_.block(idx + 1, 0, tail, idx);
      L_.block(idx, 0, tail, idx) = L31;
      L_.block(idx, idx, tail, tail) = L33;
      Eigen::MatrixXd ztail = z_.bottomRows(tail);
      z_.middleRows(idx, tail) = ztail;
      Eigen::VectorXd ytail = y_.tail(tail);
      y_.segment(idx, tail) = ytail;
    }
    z_.conservativeResize(n - 1, Eigen::NoChange);
    y_.conservativeResize(n - 1);
    L_.conservativeResize(n - 1, n - 1);
    alpha_dirty_ = true;
  }

  Posterior posterior(const Eigen::VectorXd& q) const {
    Posterior p;
    if (size() == 0) {
      p.mean = 0.0;
      p.variance = kp_.signal_variance;
      return p;
    }
    refresh_alpha();
    const Eigen::Index n = y_.size();
    Eigen::VectorXd kv(n);
    for (Eigen::Index i = 0; i < n; ++i) kv[i] = se_kernel(z_.row(i).transpose(), q, kp_);
    p.mean = kv.dot(alpha_);
    Eigen::VectorXd l = L_.triangularView<Eigen::Lower>().solve(kv);
    double v = kp_.signal_variance - l.squaredNorm();
    if (v < 0.0) {
      if (v < -1e-8) throw std::runtime_error("gp_posterior: negative variance beyond tolerance");
      v = 0.0;
    }
    p.variance = v;
    return p;
  }

  // log density of an observation y at input z (latent posterior + noise)
  double log_predictive(const Eigen::VectorXd& z, double y) const {
    const Posterior p = posterior(z);
    const double var = std::max(p.variance + kp_.noise_variance, 1e-12);
    const double d = y - p.mean;
    return -0.5 * (d * d / var + std::log(2.0 * kPi * var));
  }

  double log_marginal() const {
    if (size() == 0) return 0.0;
    refresh_alpha();
    const Eigen::Index n = y_.size();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(L_(i, i));
    return -0.5 * y_.dot(alpha_) - logdet - 0.5 * n * std::log(2.0 * kPi);
  }

  void set_params(const KernelParams& kp) {
    kp.validate();
    if (kp.lengthscales.size() != input_dim_)
      throw std::invalid_argument("set_params: lengthscale dimension mismatch");
    kp_ = kp;
    refactor();
  }

  // Marginal-likelihood ascent over log(lengthscales), log(signal), log(noise)
  // with backtracking line search.
  void fit_hyperparams(int max_steps = 50, double noise_floor = 1e-8) {
    if (size() < 2) return;
    const int d = input_dim_;
    const int np = d + 2;
    Eigen::VectorXd theta(np);
    for (int i = 0; i < d; ++i) theta[i] = std::log(kp_.lengthscales[i]);
    theta[d] = std::log(kp_.signal_variance);
    theta[d + 1] = std::log(kp_.noise_variance);

    auto apply = [&](const Eigen::VectorXd& t) {
      KernelParams kp = kp_;
      for (int i = 0; i < d; ++i) kp.lengthscales[i] = std::exp(std::clamp(t[i], -7.0, 7.0));
      kp.signal_variance = std::exp(std::clamp(t[d], -12.0, 8.0));
      kp.noise_variance = std::max(std::exp(std::clamp(t[d + 1], -18.0, 8.0)), noise_floor);
      return kp;
    };

    double cur = log_marginal();
    double step = 0.25;
    for (int it = 0; it < max_steps; ++it) {
      Eigen::VectorXd g = marginal_gradient();
      const double gn = g.norm();
      if (gn < 1e-8) break;
      bool advanced = false;
      while (step > 1e-6) {
        Eigen::VectorXd cand = theta + (step / gn) * g;
        KernelParams kp_try = apply(cand);
        const double val = try_params(kp_try);
        if (val > cur + 1e-12) {
          theta = cand;
          kp_ = kp_try;
          refactor();
          cur = val;
          advanced = true;
          step = std::min(step * 2.0, 1.0);
          break;
        }
        step *= 0.5;
      }
      if (!advanced) break;
    }
  }

 private:
  void refactor() {
    const Eigen::Index n = y_.size();
    if (n == 0) {
      L_.resize(0, 0);
      alpha_dirty_ = true;
      return;
    }
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = se_kernel(z_.row(i).transpose(), z_.row(j).transpose(), kp_);
        K(i, j) = v;
        K(j, i) = v;
      }
    K.diagonal().array() += kp_.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("gp: Cholesky failure (ill-conditioned hyperparameters)");
    L_ = llt.matrixL();
    alpha_dirty_ = true;
  }

  double try_params(const KernelParams& kp) const {
    const Eigen::Index n = y_.size();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = se_kernel(z_.row(i).transpose(), z_.row(j).transpose(), kp);
        K(i, j) = v;
        K(j, i) = v;
      }
    K.diagonal().array() += kp.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd L = llt.matrixL();
    Eigen::VectorXd a = llt.solve(y_);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(L(i, i));
    return -0.5 * y_.dot(a) - logdet - 0.5 * n * std::log(2.0 * kPi);
  }

  Eigen::VectorXd marginal_gradient() const {
    refresh_alpha();
    const Eigen::Index n = y_.size();
    const int d = input_dim_;
    Eigen::MatrixXd Kinv = Eigen::MatrixXd::Identity(n, n);
    L_.triangularView<Eigen::Lower>().solveInPlace(Kinv);
    L_.triangularView<Eigen::Lower>().transpose().solveInPlace(Kinv);
    Eigen::MatrixXd S = alpha_ * alpha_.transpose() - Kinv;  // dL/dK = S/2

    Eigen::VectorXd g = Eigen::VectorXd::Zero(d + 2);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const double k = se_kernel(z_.row(i).transpose(), z_.row(j).transpose(), kp_);
        const double s = 0.5 * S(i, j);
        for (int t = 0; t < d; ++t) {
          const double diff = (z_(i, t) - z_(j, t)) / kp_.lengthscales[t];
          g[t] += s * k * diff * diff;  // d/d log(ell_t)
        }
        g[d] += s * k;  // d/d log(sig_var)
        if (i == j) g[d + 1] += s * kp_.noise_variance;
      }
    return g;
  }

  void refresh_alpha() const {
    if (!alpha_dirty_) return;
    alpha_ = L_.triangularView<Eigen::Lower>().solve(y_);
    L_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
    alpha_dirty_ = false;
  }

  int input_dim_;
  KernelParams kp_;
  Eigen::MatrixXd z_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd L_;
  mutable Eigen::VectorXd alpha_;
  mutable bool alpha_dirty_ = true;
};

// Free-function form of the exact posterior (builds a one-off expert).
inline Posterior gp_posterior(const Eigen::MatrixXd& train_inputs,
                              const Eigen::VectorXd& train_outputs, const KernelParams& params,
                              const Eigen::VectorXd& query) {
  GpExpert e(static_cast<int>(train_inputs.cols()), params);
  for (Eigen::Index i = 0; i < train_inputs.rows(); ++i)
    e.add_point(train_inputs.row(i).transpose(), train_outputs[i]);
  return e.posterior(query);
}

}  // namespace modr::gp
