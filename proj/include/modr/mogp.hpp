#pragma once

// Mixture-of-Gaussian-processes disturbance model. Each output dimension is
// modeled independently: data points are partitioned across local GP experts
// by a kernel-weighted Dirichlet-process gating network, assignments are
// inferred by collapsed Gibbs sampling with MAP selection over sweeps, and
// predictions are per-dimension Gaussian mixtures.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "modr/geometry.hpp"
#include "modr/gp.hpp"
#include "modr/rng.hpp"

namespace modr::mogp {

struct Dataset {
  Eigen::MatrixXd inputs;   // N x n states
  Eigen::MatrixXd outputs;  // N x n observed disturbances

  int size() const { return static_cast<int>(inputs.rows()); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
  int output_dim() const { return static_cast<int>(outputs.cols()); }

  void validate(const geometry::Box* support = nullptr) const {
    if (inputs.rows() < 1 || inputs.rows() != outputs.rows())
      throw std::invalid_argument("Dataset: need N >= 1 with matching input/output rows");
    if (support) {
      for (Eigen::Index i = 0; i < outputs.rows(); ++i)
        if (!support->contains(outputs.row(i).transpose(), 1e-9))
          throw std::invalid_argument("Dataset: output outside the declared support box");
    }
  }
};

struct GatingParams {
  double kernel_width = 1.0;   // phi
  double concentration = 1.0;  // alpha

  void validate() const {
    if (!(kernel_width > 0.0) || !(concentration > 0.0))
      throw std::invalid_argument("GatingParams: phi and alpha must be positive");
  }
};

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double variance = 0.0;        // latent posterior variance
  double noise_variance = 0.0;  // the expert's fitted observation-noise level
};

struct MixturePrediction {
  std::vector<std::vector<MixtureComponent>> dims;
  int clamp_events = 0;  // how many means were clamped into the support
};

struct TrainOptions {
  int refit_every = 20;
  int refit_steps = 50;
};

class MoGPModel {
 public:
  struct DimensionModel {
    std::vector<gp::GpExpert> experts;
    std::vector<gp::KernelParams> expert_params;
    std::vector<int> assignment;  // dataset row -> expert id
  };

  Dataset data;
  geometry::Box support;
  GatingParams gating;
  gp::KernelParams kernel_init;
  std::vector<DimensionModel> dims;
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
  int sweeps = 0;

  int expert_count(int dim) const { return static_cast<int>(dims.at(static_cast<size_t>(dim)).experts.size()); }

  double gating_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    const double phi = gating.kernel_width;
    return std::exp(-0.5 * (a - b).squaredNorm() / (phi * phi));
  }
};

// Prediction-time gating: the query acts as a held-out point over the n
// existing points; the new-expert mass alpha/(n+alpha) is folded back onto
// the existing experts proportionally.
inline Eigen::VectorXd gating_weights(const MoGPModel& model, int dim, const Eigen::VectorXd& query) {
  const auto& dm = model.dims.at(static_cast<size_t>(dim));
  const int m = static_cast<int>(dm.experts.size());
  const int n = model.data.size();
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(m);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = model.gating_kernel(query, model.data.inputs.row(i).transpose());
    mass[dm.assignment[static_cast<size_t>(i)]] += k;
    total += k;
  }
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(m);
  if (total < 1e-300) {
    // query too far for the kernel: fall back to plain occupancy counts
    for (int i = 0; i < n; ++i) gamma[dm.assignment[static_cast<size_t>(i)]] += 1.0 / n;
  } else {
    gamma = mass * (static_cast<double>(n) / total);  // kernel-weighted counts
    gamma /= (n + model.gating.concentration);        // existing-expert share
  }
  const double s = gamma.sum();
  if (s <= 0.0) return Eigen::VectorXd::Constant(m, 1.0 / m);
  return gamma / s;  // proportional redistribution of the new-expert mass
}

inline MixturePrediction predict_mixture(const MoGPModel& model, const Eigen::VectorXd& query) {
  MixturePrediction pred;
  pred.dims.resize(model.dims.size());
  for (size_t d = 0; d < model.dims.size(); ++d) {
    const auto& dm = model.dims[d];
    Eigen::VectorXd gamma = gating_weights(model, static_cast<int>(d), query);
    auto& comps = pred.dims[d];
    comps.resize(dm.experts.size());
    const double lo = model.support.lower[static_cast<Eigen::Index>(d)];
    const double hi = model.support.upper[static_cast<Eigen::Index>(d)];
    for (size_t j = 0; j < dm.experts.size(); ++j) {
      const gp::Posterior p = dm.experts[j].posterior(query);
      double mu = p.mean;
      if (mu < lo || mu > hi) {
        mu = std::clamp(mu, lo, hi);
        ++pred.clamp_events;
      }
      comps[j] = MixtureComponent{gamma[static_cast<Eigen::Index>(j)], mu, p.variance,
                                  dm.experts[j].params().noise_variance};
    }
  }
  return pred;
}

namespace detail {

struct GibbsState {
  std::vector<gp::GpExpert> experts;
  std::vector<std::vector<int>> members;  // expert -> dataset rows
  std::vector<int> assignment;            // dataset row -> expert (-1 while held out)
  std::vector<Eigen::VectorXd> crowd;     // expert -> per-point kernel mass
};

inline double dim_score(const GibbsState& st, const Eigen::MatrixXd& kg,
                        const Eigen::VectorXd& rowsum, double alpha) {
  double score = 0.0;
  for (const auto& e : st.experts) score += e.log_marginal();
  const int n = static_cast<int>(st.assignment.size());
  for (int i = 0; i < n; ++i) {
    const int c = st.assignment[static_cast<size_t>(i)];
    const double s_all = rowsum[i];
    double s_c = st.crowd[static_cast<size_t>(c)][i] - kg(i, i);
    double frac;
    if (s_all > 1e-300) {
      frac = std::max(s_c, 0.0) / s_all;
    } else {
      frac = static_cast<double>(st.members[static_cast<size_t>(c)].size() - 1) / std::max(n - 1, 1);
    }
    const double nn = (n - 1) * frac;
    score += std::log(std::max(nn, 1e-12)) - std::log(n - 1 + alpha);
  }
  return score;
}

}  // namespace detail

inline MoGPModel train_mogp(const Dataset& data, const geometry::Box& support,
                            const GatingParams& gating, const gp::KernelParams& kernel_init,
                            std::uint64_t seed, int iters, const TrainOptions& opts = {}) {
  data.validate(&support);
  gating.validate();
  kernel_init.validate();
  if (iters < 1) throw std::invalid_argument("train_mogp: iters must be >= 1");
  if (support.dim() != data.output_dim())
    throw std::invalid_argument("train_mogp: support dimension mismatch");

  MoGPModel model;
  model.data = data;
  model.support = support;
  model.gating = gating;
  model.kernel_init = kernel_init;
  model.seed = seed;
  model.sweeps = iters;

  const int n = data.size();
  const int in_dim = data.input_dim();

  // degenerate dataset: all inputs identical
  bool degenerate = true;
  for (int i = 1; i < n && degenerate; ++i)
    if ((data.inputs.row(i) - data.inputs.row(0)).norm() > 1e-12) degenerate = false;
  if (degenerate && n > 1)
    model.warnings.push_back("degenerate dataset (identical inputs): trained a single expert");

  // gating kernel matrix, shared across dimensions
  Eigen::MatrixXd kg(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double phi = gating.kernel_width;
      const double v = std::exp(-0.5 * (data.inputs.row(i) - data.inputs.row(j)).squaredNorm() / (phi * phi));
      kg(i, j) = v;
      kg(j, i) = v;
    }
  kg.diagonal().setZero();
  Eigen::VectorXd rowsum = kg.rowwise().sum();

  for (int d = 0; d < data.output_dim(); ++d) {
    rng::Rng rng(seed * 1000003ull + static_cast<std::uint64_t>(d));
    const Eigen::VectorXd y = data.outputs.col(d);

    detail::GibbsState st;
    st.experts.emplace_back(in_dim, kernel_init);
    st.members.emplace_back();
    st.crowd.emplace_back(Eigen::VectorXd::Zero(n));
    st.assignment.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      st.experts[0].add_point(data.inputs.row(i).transpose(), y[i]);
      st.members[0].push_back(i);
    }
    st.crowd[0] = kg.rowwise().sum();

    auto remove_from = [&](int i) {
      const int e = st.assignment[static_cast<size_t>(i)];
      auto& mem = st.members[static_cast<size_t>(e)];
      const auto pos = std::find(mem.begin(), mem.end(), i) - mem.begin();
      st.experts[static_cast<size_t>(e)].remove_point(static_cast<int>(pos));
      mem.erase(mem.begin() + pos);
      st.crowd[static_cast<size_t>(e)] -= kg.col(i);
      st.assignment[static_cast<size_t>(i)] = -1;
      if (mem.empty()) {
        // delete the emptied expert, relabel the tail
        const size_t last = st.experts.size() - 1;
        if (static_cast<size_t>(e) != last) {
          std::swap(st.experts[static_cast<size_t>(e)], st.experts[last]);
          std::swap(st.members[static_cast<size_t>(e)], st.members[last]);
          std::swap(st.crowd[static_cast<size_t>(e)], st.crowd[last]);
          for (int r : st.members[static_cast<size_t>(e)]) st.assignment[static_cast<size_t>(r)] = e;
        }
        st.experts.pop_back();
        st.members.pop_back();
        st.crowd.pop_back();
      }
    };
    auto add_to = [&](int i, int e) {
      if (e == static_cast<int>(st.experts.size())) {
        st.experts.emplace_back(in_dim, kernel_init);
        st.members.emplace_back();
        st.crowd.emplace_back(Eigen::VectorXd::Zero(n));
      }
      st.experts[static_cast<size_t>(e)].add_point(data.inputs.row(i).transpose(), y[i]);
      st.members[static_cast<size_t>(e)].push_back(i);
      st.crowd[static_cast<size_t>(e)] += kg.col(i);
      st.assignment[static_cast<size_t>(i)] = e;
    };

    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<int> best_assignment = st.assignment;
    std::vector<gp::KernelParams> best_params{kernel_init};

    const double alpha = gating.concentration;
    // constant output columns trivially belong to one expert
    const bool constant_outputs = (y.maxCoeff() - y.minCoeff()) < 1e-14;
    const int effective_sweeps = (degenerate || constant_outputs || n == 1) ? 0 : iters;

    for (int sweep = 0; sweep < effective_sweeps; ++sweep) {
      for (int i = 0; i < n; ++i) {
        remove_from(i);
        const int m = static_cast<int>(st.experts.size());
        Eigen::VectorXd logp(m + 1);
        const double s_all = rowsum[i];
        for (int e = 0; e < m; ++e) {
          double frac;
          if (s_all > 1e-300) {
            frac = st.crowd[static_cast<size_t>(e)][i] / s_all;
          } else {
            frac = static_cast<double>(st.members[static_cast<size_t>(e)].size()) / std::max(n - 1, 1);
          }
          const double nn = (n - 1) * std::max(frac, 0.0);
          logp[e] = std::log(std::max(nn, 1e-300)) +
                    st.experts[static_cast<size_t>(e)].log_predictive(data.inputs.row(i).transpose(), y[i]);
        }
        {
          const double prior_var = kernel_init.signal_variance + kernel_init.noise_variance;
          const double ll = -0.5 * (y[i] * y[i] / prior_var + std::log(2.0 * gp::kPi * prior_var));
          logp[m] = std::log(alpha) + ll;
        }
        const double mx = logp.maxCoeff();
        Eigen::VectorXd w = (logp.array() - mx).exp();
        add_to(i, rng.categorical(w));
      }
      if (opts.refit_every > 0 && (sweep + 1) % opts.refit_every == 0)
        for (auto& e : st.experts) e.fit_hyperparams(opts.refit_steps);

      const double score = detail::dim_score(st, kg, rowsum, alpha);
      if (score > best_score) {
        best_score = score;
        best_assignment = st.assignment;
        best_params.clear();
        for (const auto& e : st.experts) best_params.push_back(e.params());
      }
    }

    // rebuild the MAP state with experts labeled in first-appearance order
    MoGPModel::DimensionModel dm;
    std::vector<int> relabel(best_params.size(), -1);
    dm.assignment.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int old = best_assignment[static_cast<size_t>(i)];
      if (relabel[static_cast<size_t>(old)] < 0) {
        relabel[static_cast<size_t>(old)] = static_cast<int>(dm.experts.size());
        dm.experts.emplace_back(in_dim, best_params[static_cast<size_t>(old)]);
        dm.expert_params.push_back(best_params[static_cast<size_t>(old)]);
      }
      const int e = relabel[static_cast<size_t>(old)];
      dm.assignment[static_cast<size_t>(i)] = e;
      dm.experts[static_cast<size_t>(e)].add_point(data.inputs.row(i).transpose(), y[i]);
    }
    if (effective_sweeps == 0 && n > 1) {
      // single expert; one hyperparameter fit so the noise level is sane
      dm.experts[0].fit_hyperparams(opts.refit_steps);
      dm.expert_params[0] = dm.experts[0].params();
    }
    model.dims.push_back(std::move(dm));
  }
  return model;
}

// Identical pipeline with the expert count pinned to one per dimension (the
// single-GP baseline): no assignment sampling, one hyperparameter fit.
inline MoGPModel train_single_expert(const Dataset& data, const geometry::Box& support,
                                     const GatingParams& gating, const gp::KernelParams& kernel_init,
                                     std::uint64_t seed, const TrainOptions& opts = {}) {
  data.validate(&support);
  gating.validate();
  kernel_init.validate();
  MoGPModel model;
  model.data = data;
  model.support = support;
  model.gating = gating;
  model.kernel_init = kernel_init;
  model.seed = seed;
  model.sweeps = 0;
  const int n = data.size();
  for (int d = 0; d < data.output_dim(); ++d) {
    MoGPModel::DimensionModel dm;
    dm.experts.emplace_back(data.input_dim(), kernel_init);
    dm.assignment.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i)
      dm.experts[0].add_point(data.inputs.row(i).transpose(), data.outputs(i, d));
    dm.experts[0].fit_hyperparams(opts.refit_steps);
    dm.expert_params.push_back(dm.experts[0].params());
    model.dims.push_back(std::move(dm));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Versioned structured-text (JSON) model serialization.

inline nlohmann::json to_json(const MoGPModel& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = m.seed;
  j["sweeps"] = m.sweeps;
  j["gating"] = {{"kernel_width", m.gating.kernel_width}, {"concentration", m.gating.concentration}};
  j["support"] = {{"lower", std::vector<double>(m.support.lower.data(), m.support.lower.data() + m.support.dim())},
                  {"upper", std::vector<double>(m.support.upper.data(), m.support.upper.data() + m.support.dim())}};
  auto kp_json = [](const gp::KernelParams& kp) {
    return nlohmann::json{
        {"lengthscales", std::vector<double>(kp.lengthscales.data(), kp.lengthscales.data() + kp.lengthscales.size())},
        {"signal_variance", kp.signal_variance},
        {"noise_variance", kp.noise_variance}};
  };
  j["kernel_init"] = kp_json(m.kernel_init);
  j["warnings"] = m.warnings;
  auto mat_json = [](const Eigen::MatrixXd& M) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      Eigen::RowVectorXd r = M.row(i);
      rows.emplace_back(r.data(), r.data() + r.size());
    }
    return rows;
  };
  j["data"] = {{"inputs", mat_json(m.data.inputs)}, {"outputs", mat_json(m.data.outputs)}};
  j["dims"] = nlohmann::json::array();
  for (const auto& dm : m.dims) {
    nlohmann::json jd;
    jd["assignment"] = dm.assignment;
    jd["experts"] = nlohmann::json::array();
    for (const auto& kp : dm.expert_params) jd["experts"].push_back(kp_json(kp));
    j["dims"].push_back(jd);
  }
  return j;
}

inline MoGPModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::invalid_argument("model file: unsupported version");
  MoGPModel m;
  m.seed = j["seed"].get<std::uint64_t>();
  m.sweeps = j["sweeps"].get<int>();
  m.gating.kernel_width = j["gating"]["kernel_width"].get<double>();
  m.gating.concentration = j["gating"]["concentration"].get<double>();
  auto lo = j["support"]["lower"].get<std::vector<double>>();
  auto hi = j["support"]["upper"].get<std::vector<double>>();
  m.support = geometry::Box(Eigen::Map<Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size())),
                            Eigen::Map<Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size())));
  auto kp_from = [](const nlohmann::json& jk) {
    gp::KernelParams kp;
    auto ls = jk["lengthscales"].get<std::vector<double>>();
    kp.lengthscales = Eigen::Map<Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
    kp.signal_variance = jk["signal_variance"].get<double>();
    kp.noise_variance = jk["noise_variance"].get<double>();
    return kp;
  };
  m.kernel_init = kp_from(j["kernel_init"]);
  m.warnings = j["warnings"].get<std::vector<std::string>>();
  auto mat_from = [](const nlohmann::json& jm) {
    auto rows = jm.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i)
      M.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<Eigen::VectorXd>(rows[i].data(), static_cast<Eigen::Index>(rows[i].size())).transpose();
    return M;
  };
  m.data.inputs = mat_from(j["data"]["inputs"]);
  m.data.outputs = mat_from(j["data"]["outputs"]);
  for (const auto& jd : j["dims"]) {
    MoGPModel::DimensionModel dm;
    dm.assignment = jd["assignment"].get<std::vector<int>>();
    const int in_dim = m.data.input_dim();
    const int d = static_cast<int>(m.dims.size());
    for (const auto& jk : jd["experts"]) {
      dm.expert_params.push_back(kp_from(jk));
      dm.experts.emplace_back(in_dim, dm.expert_params.back());
    }
    for (size_t i = 0; i < dm.assignment.size(); ++i)
      dm.experts[static_cast<size_t>(dm.assignment[i])].add_point(
          m.data.inputs.row(static_cast<Eigen::Index>(i)).transpose(),
          m.data.outputs(static_cast<Eigen::Index>(i), d));
    m.dims.push_back(std::move(dm));
  }
  return m;
}

inline void save_model(const MoGPModel& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_model: cannot open " + path);
  f << to_json(m).dump(2) << "\n";
}

inline MoGPModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return model_from_json(j);
}

}  // namespace modr::mogp
