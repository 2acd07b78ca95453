#ifndef BOIRL_GP_HPP
#define BOIRL_GP_HPP

// Exact Gaussian-process regression over reward parameters with three
// kernels: RBF and Matern 5/2 on box-whitened inputs, and the rho-RBF,
// an RBF applied to the K-dimensional rho-projection of theta. Posterior
// mean/variance follow the standard closed form via a cached Cholesky
// factorization of K + sigma^2 I.

#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "boirl/projection.hpp"
#include "boirl/reward.hpp"

namespace boirl {

enum class KernelKind { Rbf, Matern52, RhoRbf };

inline std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::Rbf: return "rbf";
    case KernelKind::Matern52: return "matern";
    case KernelKind::RhoRbf: return "rho-rbf";
  }
  return "rbf";
}

inline KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "rbf") return KernelKind::Rbf;
  if (s == "matern") return KernelKind::Matern52;
  if (s == "rho-rbf") return KernelKind::RhoRbf;
  throw std::invalid_argument("unknown kernel kind: " + s);
}

struct KernelSpec {
  KernelKind kind = KernelKind::Rbf;
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  // RBF/Matern inputs are whitened per-coordinate to the unit box so one
  // lengthscale spans differently-scaled parameters. Empty = identity.
  Bounds whiten_bounds;
  // rho-RBF only: the frozen basis and the environment-bound scorer.
  std::shared_ptr<const ProjectionBasis> basis;
  std::shared_ptr<const TrajectoryScorer> scorer;
  // Interprets raw theta for the rho projection (rho-RBF only).
  RewardFamily family = RewardFamily::LogisticState;

  void check() const {
    if (!(lengthscale > 0.0) || !(signal_variance > 0.0)) {
      throw std::invalid_argument("KernelSpec: hyperparameters must be positive");
    }
    if (kind == KernelKind::RhoRbf && (!basis || !scorer)) {
      throw std::invalid_argument("KernelSpec: rho-rbf requires a projection basis");
    }
  }
};

inline KernelSpec make_rho_rbf(const EnvironmentSpec& env, std::shared_ptr<const ProjectionBasis> basis,
                               double lengthscale = 1.0, double signal_variance = 1.0) {
  KernelSpec spec;
  spec.kind = KernelKind::RhoRbf;
  spec.lengthscale = lengthscale;
  spec.signal_variance = signal_variance;
  spec.scorer = std::make_shared<TrajectoryScorer>(*basis, env);
  spec.basis = std::move(basis);
  spec.family = env.family;
  spec.whiten_bounds = env.theta_bounds;
  return spec;
}

// Maps raw theta into the space the stationary kernel measures distances in:
// whitened coordinates for RBF/Matern, the rho-vector for rho-RBF.
inline std::vector<double> project_input(const KernelSpec& spec, std::span<const double> theta) {
  if (spec.kind == KernelKind::RhoRbf) {
    RewardParams params(std::vector<double>(theta.begin(), theta.end()), spec.family,
                        spec.whiten_bounds);
    std::vector<double> out;
    spec.scorer->rho_vector(params, out);
    return out;
  }
  std::vector<double> out(theta.begin(), theta.end());
  if (!spec.whiten_bounds.empty()) {
    if (spec.whiten_bounds.size() != theta.size()) {
      throw std::invalid_argument("project_input: bounds dimension mismatch");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      double w = spec.whiten_bounds[i].width();
      out[i] = w > 0.0 ? (out[i] - spec.whiten_bounds[i].lo) / w : 0.5;
    }
  }
  return out;
}

inline double kernel_eval_projected(const KernelSpec& spec, std::span<const double> a,
                                    std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("kernel_eval: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  const double l = spec.lengthscale;
  switch (spec.kind) {
    case KernelKind::Rbf:
    case KernelKind::RhoRbf:
      return spec.signal_variance * std::exp(-d2 / (2.0 * l * l));
    case KernelKind::Matern52: {
      double r = std::sqrt(d2) / l;
      double c = std::sqrt(5.0) * r;
      return spec.signal_variance * (1.0 + c + 5.0 * d2 / (3.0 * l * l)) * std::exp(-c);
    }
  }
  return 0.0;
}

inline double kernel_eval(const KernelSpec& spec, std::span<const double> a,
                          std::span<const double> b) {
  auto ua = project_input(spec, a);
  auto ub = project_input(spec, b);
  return kernel_eval_projected(spec, ua, ub);
}

struct GPConfig {
  double noise_variance = 1e-4;
  // Standardize observations (subtract mean, divide by std) before fitting
  // against the zero-mean prior; predictions are un-standardized.
  bool normalize_y = false;
};

struct PosteriorStats {
  double mean = 0.0;
  double variance = 0.0;
};

// Immutable fitted GP. Refits produce new states; queries are pure.
class GPState {
 public:
  GPState(std::vector<std::vector<double>> inputs, std::vector<double> outputs, KernelSpec kernel,
          GPConfig config = {})
      : kernel_(std::move(kernel)), config_(config), inputs_(std::move(inputs)),
        y_(std::move(outputs)) {
    kernel_.check();
    if (inputs_.size() != y_.size()) {
      throw std::invalid_argument("GPState: input/output count mismatch");
    }
    if (config_.noise_variance < 0.0) {
      throw std::invalid_argument("GPState: negative noise variance");
    }
    for (double v : y_) {
      if (!std::isfinite(v)) throw std::invalid_argument("GPState: non-finite observation");
    }
    projected_.reserve(inputs_.size());
    for (const auto& x : inputs_) projected_.push_back(project_input(kernel_, x));
    if (config_.normalize_y && !y_.empty()) {
      y_mean_ = mean_of(y_);
      double sd = stddev_of(y_);
      y_scale_ = sd > 1e-12 ? sd : 1.0;
    }
    factorize();
  }

  const KernelSpec& kernel() const { return kernel_; }
  const GPConfig& config() const { return config_; }
  std::size_t size() const { return inputs_.size(); }
  const std::vector<std::vector<double>>& inputs() const { return inputs_; }
  const std::vector<std::vector<double>>& projected_inputs() const { return projected_; }
  const std::vector<double>& outputs() const { return y_; }
  double jitter() const { return jitter_; }

  double best_observed() const {
    if (y_.empty()) throw std::logic_error("GPState: no observations");
    return *std::min_element(y_.begin(), y_.end());
  }

  PosteriorStats posterior_projected(std::span<const double> u) const {
    const double prior = kernel_eval_projected(kernel_, u, u);
    if (inputs_.empty()) return {y_mean_, prior * y_scale_ * y_scale_};
    const auto n = static_cast<Eigen::Index>(inputs_.size());
    Eigen::VectorXd kvec(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      kvec(i) = kernel_eval_projected(kernel_, projected_[i], u);
    }
    double mu = kvec.dot(alpha_);
    Eigen::VectorXd v = llt_.matrixL().solve(kvec);
    double var = prior - v.squaredNorm();
    if (var < 0.0) var = 0.0;  // roundoff truncation
    return {y_mean_ + y_scale_ * mu, y_scale_ * y_scale_ * var};
  }

  PosteriorStats posterior(std::span<const double> theta) const {
    auto u = project_input(kernel_, theta);
    return posterior_projected(u);
  }

  // -1/2 y^T (K+s^2 I)^-1 y - 1/2 log det(K+s^2 I) - (T/2) log 2pi, on the
  // (possibly standardized) observations.
  double log_marginal_likelihood() const {
    if (inputs_.empty()) return 0.0;
    const auto n = static_cast<Eigen::Index>(inputs_.size());
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = (y_[i] - y_mean_) / y_scale_;
    double quad = z.dot(alpha_);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt_.matrixLLT()(i, i));
    return -0.5 * quad - 0.5 * logdet -
           0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  }

 private:
  void factorize() {
    if (inputs_.empty()) return;
    const auto n = static_cast<Eigen::Index>(inputs_.size());
    Eigen::MatrixXd gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        double k = kernel_eval_projected(kernel_, projected_[i], projected_[j]);
        gram(i, j) = k;
        gram(j, i) = k;
      }
    }
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = (y_[i] - y_mean_) / y_scale_;
    // Escalating jitter when the factorization loses positive definiteness
    // (smallest pivot below 1e-10).
    for (double jitter : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
      Eigen::MatrixXd m = gram;
      m.diagonal().array() += config_.noise_variance + jitter;
      llt_.compute(m);
      if (llt_.info() != Eigen::Success) continue;
      double min_pivot = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) {
        double l = llt_.matrixLLT()(i, i);
        min_pivot = std::min(min_pivot, l * l);
      }
      if (min_pivot < 1e-10 && jitter < 1e-4) continue;
      if (!(min_pivot > 0.0)) continue;
      jitter_ = jitter;
      alpha_ = llt_.solve(z);
      return;
    }
    throw std::runtime_error(
        "GPState: kernel matrix not positive definite even after max jitter "
        "(duplicate inputs with zero noise?)");
  }

  KernelSpec kernel_;
  GPConfig config_;
  std::vector<std::vector<double>> inputs_;
  std::vector<std::vector<double>> projected_;
  std::vector<double> y_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double jitter_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

inline GPState gp_fit(std::vector<std::vector<double>> inputs, std::vector<double> outputs,
                      KernelSpec kernel, GPConfig config = {}) {
  return GPState(std::move(inputs), std::move(outputs), std::move(kernel), config);
}

inline PosteriorStats gp_posterior(const GPState& state, std::span<const double> theta) {
  return state.posterior(theta);
}

inline double log_marginal_likelihood(const GPState& state) {
  return state.log_marginal_likelihood();
}

// Grid search over the lengthscale maximizing the LML; ties keep the
// earlier (smaller) candidate. Other hyperparameters stay fixed.
inline double select_lengthscale_by_lml(const std::vector<std::vector<double>>& inputs,
                                        const std::vector<double>& outputs, KernelSpec kernel,
                                        GPConfig config, int grid_size = 16,
                                        double log10_lo = -2.0, double log10_hi = 1.0) {
  double best_l = kernel.lengthscale;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid_size; ++i) {
    double t = grid_size == 1 ? 0.0 : static_cast<double>(i) / (grid_size - 1);
    double l = std::pow(10.0, log10_lo + t * (log10_hi - log10_lo));
    kernel.lengthscale = l;
    try {
      GPState state(inputs, outputs, kernel, config);
      double lml = state.log_marginal_likelihood();
      if (lml > best_lml) {
        best_lml = lml;
        best_l = l;
      }
    } catch (const std::runtime_error&) {
      // Skip lengthscales that make the Gram matrix numerically singular.
    }
  }
  return best_l;
}

// --- GP snapshot ------------------------------------------------------------

inline nlohmann::json gp_to_json(const GPState& state) {
  nlohmann::json j;
  j["kernel"] = to_string(state.kernel().kind);
  j["lengthscale"] = state.kernel().lengthscale;
  j["signal_variance"] = state.kernel().signal_variance;
  j["noise_variance"] = state.config().noise_variance;
  j["normalize_y"] = state.config().normalize_y;
  auto bounds = nlohmann::json::array();
  for (const auto& b : state.kernel().whiten_bounds) bounds.push_back({b.lo, b.hi});
  j["bounds"] = std::move(bounds);
  j["inputs"] = state.inputs();
  j["outputs"] = state.outputs();
  return j;
}

inline void save_gp(const std::string& path, const GPState& state) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_gp: cannot open " + path);
  os << gp_to_json(state).dump(2) << '\n';
}

// Rebuilds a GP from a snapshot; the factorization is recomputed. For a
// rho-RBF snapshot the caller must supply the environment and basis the
// snapshot was built against.
inline GPState gp_from_json(const nlohmann::json& j, const EnvironmentSpec* env = nullptr,
                            std::shared_ptr<const ProjectionBasis> basis = nullptr) {
  KernelSpec kernel;
  kernel.kind = kernel_kind_from_string(j.at("kernel").get<std::string>());
  kernel.lengthscale = j.at("lengthscale").get<double>();
  kernel.signal_variance = j.at("signal_variance").get<double>();
  for (const auto& b : j.at("bounds")) {
    kernel.whiten_bounds.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
  }
  if (kernel.kind == KernelKind::RhoRbf) {
    if (env == nullptr || basis == nullptr) {
      throw std::invalid_argument("gp_from_json: rho-rbf snapshot needs environment and basis");
    }
    kernel.scorer = std::make_shared<TrajectoryScorer>(*basis, *env);
    kernel.basis = std::move(basis);
    kernel.family = env->family;
  }
  GPConfig config;
  config.noise_variance = j.at("noise_variance").get<double>();
  config.normalize_y = j.at("normalize_y").get<bool>();
  auto inputs = j.at("inputs").get<std::vector<std::vector<double>>>();
  auto outputs = j.at("outputs").get<std::vector<double>>();
  return GPState(std::move(inputs), std::move(outputs), std::move(kernel), config);
}

inline GPState load_gp(const std::string& path, const EnvironmentSpec* env = nullptr,
                       std::shared_ptr<const ProjectionBasis> basis = nullptr) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_gp: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return gp_from_json(j, env, std::move(basis));
}

}  // namespace boirl

#endif  // BOIRL_GP_HPP
