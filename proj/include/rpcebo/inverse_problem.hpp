#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpcebo/pce_basis.hpp"
#include "rpcebo/surrogate_posterior.hpp"

namespace rpcebo {

/// Frequency response observations, flattened frequency-major:
/// flat index = frequency index * n_sensors + sensor index.
struct ObservationSet {
  Eigen::VectorXd frequencies_hz;
  std::vector<std::string> sensor_ids;
  Eigen::VectorXcd observations;

  int n_frequencies() const { return static_cast<int>(frequencies_hz.size()); }
  int n_sensors() const { return static_cast<int>(sensor_ids.size()); }
  int n_observations() const { return n_frequencies() * n_sensors(); }

  double frequency_of(int flat) const { return frequencies_hz(flat / n_sensors()); }
  int sensor_of(int flat) const { return flat % n_sensors(); }

  void validate() const {
    if (n_frequencies() < 1 || n_sensors() < 1) {
      throw std::invalid_argument("ObservationSet: empty frequency or sensor list");
    }
    if (observations.size() != n_observations()) {
      throw std::invalid_argument("ObservationSet: observation count must be n_omega * n_s");
    }
    for (int j = 1; j < n_frequencies(); ++j) {
      if (!(frequencies_hz(j) > frequencies_hz(j - 1))) {
        throw std::invalid_argument("ObservationSet: frequencies must be strictly increasing");
      }
    }
    for (Eigen::Index i = 0; i < observations.size(); ++i) {
      if (observations(i) == std::complex<double>(0.0, 0.0)) {
        throw std::invalid_argument("ObservationSet: zero observation (logarithm undefined)");
      }
    }
  }
};

/// Frequency-domain correlation coefficient: exponentially decaying part
/// with weight r over a constant baseline 1 - r.
inline double correlation(double f1, double f2, double l_co_hz, double r) {
  if (!(l_co_hz > 0.0)) throw std::invalid_argument("correlation: l_co must be positive");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("correlation: r must lie in [0,1]");
  return r * std::exp(-std::abs(f1 - f2) / l_co_hz) + (1.0 - r);
}

/// Error covariance model for the log-amplitude and phase residuals.
/// IID: Sigma_ww = Sigma_phiphi = beta_O^{-1}/2 I. Correlated: homoscedastic
/// variances with the frequency correlation above; distinct sensors are
/// uncorrelated.
struct ErrorModel {
  enum class Kind { kIid, kCorrelated };

  Kind kind = Kind::kIid;
  double beta_o = 1.0;
  double sigma_w = 0.0;
  double sigma_phi = 0.0;
  double l_co_hz = 1.0;
  double r = 0.0;

  static ErrorModel iid(double beta_o) {
    if (!(beta_o > 0.0)) throw std::invalid_argument("ErrorModel::iid: beta_o must be positive");
    ErrorModel model;
    model.kind = Kind::kIid;
    model.beta_o = beta_o;
    return model;
  }

  static ErrorModel correlated(double sigma_w, double sigma_phi, double l_co_hz, double r) {
    if (!(sigma_w > 0.0) || !(sigma_phi > 0.0)) {
      throw std::invalid_argument("ErrorModel::correlated: sigmas must be positive");
    }
    if (!(l_co_hz > 0.0) || !(r >= 0.0 && r <= 1.0)) {
      throw std::invalid_argument("ErrorModel::correlated: invalid correlation parameters");
    }
    ErrorModel model;
    model.kind = Kind::kCorrelated;
    model.sigma_w = sigma_w;
    model.sigma_phi = sigma_phi;
    model.l_co_hz = l_co_hz;
    model.r = r;
    return model;
  }

  Eigen::MatrixXd covariance_log_amplitude(const ObservationSet& obs) const {
    return covariance(obs, kind == Kind::kIid ? 0.0 : sigma_w * sigma_w);
  }

  Eigen::MatrixXd covariance_phase(const ObservationSet& obs) const {
    return covariance(obs, kind == Kind::kIid ? 0.0 : sigma_phi * sigma_phi);
  }

 private:
  Eigen::MatrixXd covariance(const ObservationSet& obs, double variance) const {
    const int n = obs.n_observations();
    if (kind == Kind::kIid) {
      return (0.5 / beta_o) * Eigen::MatrixXd::Identity(n, n);
    }
    Eigen::MatrixXd cov(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        double value = 0.0;
        if (obs.sensor_of(i) == obs.sensor_of(j)) {
          value = variance *
                  correlation(obs.frequency_of(i), obs.frequency_of(j), l_co_hz, r);
        }
        cov(i, j) = value;
        cov(j, i) = value;
      }
    }
    return cov;
  }
};

enum class MapSpace { kU, kX };

/// Relative Euclidean distance of a MAP estimate from a reference, both in
/// standard-normal coordinates.
inline double map_error(const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                        const Eigen::Ref<const Eigen::VectorXd>& u_ref) {
  const double ref_norm = u_ref.norm();
  if (!(ref_norm > 0.0)) throw std::invalid_argument("map_error: zero reference");
  return (u_hat - u_ref).norm() / ref_norm;
}

/// The Bayesian updating objective: priors, observations, error covariance
/// and a forward model u -> y_M, with the log-posterior evaluated in
/// standard-normal coordinates. Immutable after construction.
class InverseProblem {
 public:
  using Forward = std::function<Eigen::VectorXcd(const Eigen::VectorXd&)>;

  InverseProblem(std::vector<MarginalPrior> priors, ObservationSet observations,
                 ErrorModel error_model, Forward forward, MapSpace map_space = MapSpace::kU)
      : priors_(std::move(priors)),
        observations_(std::move(observations)),
        error_model_(error_model),
        forward_(std::move(forward)),
        map_space_(map_space) {
    observations_.validate();
    const Eigen::MatrixXd cov_w = error_model_.covariance_log_amplitude(observations_);
    const Eigen::MatrixXd cov_phi = error_model_.covariance_phase(observations_);
    llt_w_.compute(cov_w);
    llt_phi_.compute(cov_phi);
    if (llt_w_.info() != Eigen::Success || llt_phi_.info() != Eigen::Success) {
      throw std::runtime_error("InverseProblem: error covariance not positive definite");
    }
    log_det_w_ = log_det(llt_w_);
    log_det_phi_ = log_det(llt_phi_);
    log_amp_obs_ = observations_.observations.array().abs().log();
  }

  int dimension() const { return static_cast<int>(priors_.size()); }
  const std::vector<MarginalPrior>& priors() const { return priors_; }
  const ObservationSet& observations() const { return observations_; }
  const ErrorModel& error_model() const { return error_model_; }
  MapSpace map_space() const { return map_space_; }

  Eigen::VectorXcd forward(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    Eigen::VectorXcd y = forward_(u);
    if (y.size() != observations_.n_observations()) {
      throw std::runtime_error("InverseProblem: forward output length mismatch");
    }
    return y;
  }

  /// ln f(x(u)) expressed in standard-normal coordinates; for x-space MAP
  /// the lognormal Jacobian adds a linear tilt.
  double log_prior_term(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    double value = -0.5 * u.squaredNorm();
    if (map_space_ == MapSpace::kX) {
      for (int i = 0; i < dimension(); ++i) {
        value -= priors_[static_cast<std::size_t>(i)].sigma_ln() * u(i);
      }
    }
    return value;
  }

  /// Misfit-based log-posterior for a given model prediction vector.
  /// The phase term uses the principal argument of y_O / y, which avoids
  /// branch-cut artifacts of raw phase differences. Invalid (nullopt) when
  /// any prediction vanishes.
  std::optional<double> misfit_log_posterior(const Eigen::Ref<const Eigen::VectorXd>& u,
                                             const Eigen::Ref<const Eigen::VectorXcd>& y) const {
    const int n = observations_.n_observations();
    Eigen::VectorXd w_misfit(n), phi_misfit(n);
    for (int i = 0; i < n; ++i) {
      const double mag = std::abs(y(i));
      if (!(mag > 0.0) || !std::isfinite(mag)) return std::nullopt;
      w_misfit(i) = log_amp_obs_(i) - std::log(mag);
      phi_misfit(i) = std::arg(observations_.observations(i) / y(i));
    }
    const double quad_w = w_misfit.dot(llt_w_.solve(w_misfit));
    const double quad_phi = phi_misfit.dot(llt_phi_.solve(phi_misfit));
    return 0.5 * (-log_det_w_ - log_det_phi_ - quad_w - quad_phi) + log_prior_term(u);
  }

  /// Exact objective h(u): forward model evaluation plus misfit.
  std::optional<double> log_posterior_exact(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    return misfit_log_posterior(u, forward(u));
  }

  /// Surrogate objective h_hat(u; R^(k), eps^(k)) for hierarchy sample k.
  std::optional<double> log_posterior_surrogate(const Eigen::Ref<const Eigen::VectorXd>& u,
                                                const SurrogateEnsemble& ensemble,
                                                int sample_index) const {
    const auto y = ensemble_sample_prediction(ensemble, sample_index, u);
    if (!y) return std::nullopt;
    return misfit_log_posterior(u, *y);
  }

  /// Plug-in surrogate objective (posterior-mean numerator, MAP denominator,
  /// zero surrogate error); the global-reward optimization target.
  std::optional<double> log_posterior_plugin(const Eigen::Ref<const Eigen::VectorXd>& u,
                                             const SurrogateEnsemble& ensemble) const {
    const auto y = ensemble_plugin_prediction(ensemble, u);
    if (!y) return std::nullopt;
    return misfit_log_posterior(u, *y);
  }

  Eigen::VectorXd to_physical(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    return from_standard_normal(u, priors_);
  }

 private:
  static double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    double value = 0.0;
    for (Eigen::Index i = 0; i < llt.matrixLLT().rows(); ++i) {
      value += 2.0 * std::log(llt.matrixLLT()(i, i));
    }
    return value;
  }

  std::vector<MarginalPrior> priors_;
  ObservationSet observations_;
  ErrorModel error_model_;
  Forward forward_;
  MapSpace map_space_;
  Eigen::LLT<Eigen::MatrixXd> llt_w_, llt_phi_;
  double log_det_w_ = 0.0, log_det_phi_ = 0.0;
  Eigen::ArrayXd log_amp_obs_;
};

}  // namespace rpcebo
