#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "rpcebo/complex_stats.hpp"
#include "rpcebo/rng.hpp"
#include "rpcebo/rpce_model.hpp"
#include "rpcebo/sbl_trainer.hpp"

namespace rpcebo {

/// Denominator magnitudes below this (relative to the coefficient norm)
/// trigger per-evaluation rejection in sampled predictions.
inline constexpr double kSampleDenominatorFloor = 1e-10;

struct TmcmcConfig {
  int samples_per_stage = 500;
  double proposal_scale = 0.2;     // scales the weighted sample covariance
  double target_weight_cov = 1.0;  // CoV of incremental weights per stage
  // Sharp trained likelihoods (beta_S up to the cap) need ~30 stages to
  // temper from the coefficient prior; 20 is not enough headroom.
  int max_stages = 50;
  int mcmc_steps = 10;  // Metropolis moves per sample and stage
};

struct TmcmcResult {
  Eigen::MatrixXd samples;  // n x dim
  Eigen::VectorXd log_likelihood;
  int stages = 0;
};

/// Transitional MCMC from a prior to prior x likelihood over R^dim.
/// Stage exponents are chosen adaptively so the coefficient of variation of
/// the incremental weights matches the target; each stage resamples and
/// applies Metropolis moves with a scaled weighted-covariance proposal.
inline TmcmcResult tmcmc_sample(int dim,
                                const std::function<Eigen::VectorXd(RngStream&)>& prior_draw,
                                const std::function<double(const Eigen::VectorXd&)>& log_prior,
                                const std::function<double(const Eigen::VectorXd&)>& log_likelihood,
                                const TmcmcConfig& config, RngStream& rng) {
  if (config.samples_per_stage < 100) {
    throw std::invalid_argument("tmcmc_sample: need at least 100 samples per stage");
  }
  if (!(config.proposal_scale > 0.0 && config.proposal_scale <= 1.0)) {
    throw std::invalid_argument("tmcmc_sample: proposal scale must lie in (0, 1]");
  }
  const int n = config.samples_per_stage;

  Eigen::MatrixXd samples(n, dim);
  Eigen::VectorXd ll(n);
  for (int i = 0; i < n; ++i) {
    samples.row(i) = prior_draw(rng).transpose();
    ll(i) = log_likelihood(samples.row(i).transpose());
  }

  double exponent = 0.0;
  int stages = 0;
  while (exponent < 1.0) {
    if (++stages > config.max_stages) {
      std::ostringstream msg;
      msg << "tmcmc_sample: exceeded " << config.max_stages
          << " stages at exponent " << exponent;
      throw std::runtime_error(msg.str());
    }
    const double ll_max = ll.maxCoeff();
    if (!std::isfinite(ll_max)) {
      throw std::runtime_error("tmcmc_sample: no prior sample has finite likelihood");
    }

    const auto weight_cov = [&](double dp) {
      const Eigen::ArrayXd w = ((ll.array() - ll_max) * dp).exp();
      const double mean = w.mean();
      const double sd = std::sqrt((w - mean).square().mean());
      return sd / mean;
    };
    double dp = 1.0 - exponent;
    if (weight_cov(dp) > config.target_weight_cov) {
      double lo = 0.0, hi = dp;
      for (int b = 0; b < 60; ++b) {
        const double mid = 0.5 * (lo + hi);
        (weight_cov(mid) > config.target_weight_cov ? hi : lo) = mid;
      }
      dp = 0.5 * (lo + hi);
    }
    exponent += dp;

    Eigen::ArrayXd weights = ((ll.array() - ll_max) * dp).exp();
    weights /= weights.sum();

    // weighted moments for the proposal
    const Eigen::RowVectorXd mean = weights.matrix().transpose() * samples;
    Eigen::MatrixXd centered = samples.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * weights.matrix().asDiagonal() * centered;
    cov *= config.proposal_scale * config.proposal_scale;
    cov.diagonal().array() += 1e-12 * (1.0 + cov.trace() / dim);
    const Eigen::LLT<Eigen::MatrixXd> proposal(cov);

    // multinomial resampling via the weight CDF
    Eigen::VectorXd cdf(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += weights(i);
      cdf(i) = acc;
    }
    Eigen::MatrixXd resampled(n, dim);
    Eigen::VectorXd resampled_ll(n);
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform() * acc;
      const int pick = static_cast<int>(
          std::lower_bound(cdf.data(), cdf.data() + n, u) - cdf.data());
      resampled.row(i) = samples.row(std::min(pick, n - 1));
      resampled_ll(i) = ll(std::min(pick, n - 1));
    }

    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd x = resampled.row(i).transpose();
      double x_ll = resampled_ll(i);
      double x_lp = log_prior(x);
      for (int step = 0; step < config.mcmc_steps; ++step) {
        Eigen::VectorXd xi(dim);
        for (int j = 0; j < dim; ++j) xi(j) = rng.normal();
        const Eigen::VectorXd cand = x + proposal.matrixL() * xi;
        const double cand_ll = log_likelihood(cand);
        if (!std::isfinite(cand_ll)) continue;
        const double cand_lp = log_prior(cand);
        const double log_ratio = exponent * (cand_ll - x_ll) + cand_lp - x_lp;
        if (std::log(rng.uniform()) < log_ratio) {
          x = cand;
          x_ll = cand_ll;
          x_lp = cand_lp;
        }
      }
      resampled.row(i) = x.transpose();
      resampled_ll(i) = x_ll;
    }
    samples = std::move(resampled);
    ll = std::move(resampled_ll);
  }

  TmcmcResult result;
  result.samples = std::move(samples);
  result.log_likelihood = std::move(ll);
  result.stages = stages;
  return result;
}

/// Posterior machinery for one trained model: the tempered denominator
/// target and the conditional numerator draws, both rebuilt from the
/// training data stored with the model.
class DenominatorPosterior {
 public:
  explicit DenominatorPosterior(const RpceModel& model)
      : alpha_q_(model.alpha_q), beta_(model.beta_s) {
    problem_ = SblProblem::build(
        TrainingData{model.training.inputs, model.training.outputs},
        model.numerator_indices, model.denominator_indices);
    gram_ = problem_.upsilon.adjoint() *
            c_inverse(problem_, model.alpha_p, beta_) * problem_.upsilon;
    gram_ = 0.5 * (gram_ + gram_.adjoint().eval());
    const NumeratorPosterior post =
        numerator_posterior_covariance_only(problem_, model.alpha_p, beta_);
    sigma_pp_ = post.covariance;
    sigma_chol_ = Eigen::LLT<Eigen::MatrixXd>(sigma_pp_).matrixL();
    alpha_p_ = model.alpha_p;
  }

  int n_q() const { return problem_.n_q(); }
  int n_p() const { return problem_.n_p(); }

  /// Tempered part: ln f(m | q) up to q-independent constants.
  double log_likelihood(const Eigen::Ref<const Eigen::VectorXcd>& q) const {
    const Eigen::VectorXcd denom = problem_.denominator_values(q);
    double log_det = 0.0;
    for (Eigen::Index k = 0; k < denom.size(); ++k) {
      const double mag = std::abs(denom(k));
      if (mag < kDenominatorFloor) return -std::numeric_limits<double>::infinity();
      log_det += 2.0 * std::log(mag);
    }
    return log_det - q.dot(gram_ * q).real();
  }

  /// ln f(q | alpha_q) up to constants.
  double log_prior(const Eigen::Ref<const Eigen::VectorXcd>& q) const {
    return -(q.array().abs2() * alpha_q_.array()).sum();
  }

  Eigen::VectorXcd prior_draw(RngStream& rng) const {
    Eigen::VectorXcd q(alpha_q_.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q(i) = rng.proper_normal() / std::sqrt(alpha_q_(i));
    }
    return q;
  }

  Eigen::VectorXcd conditional_mean_p(const Eigen::Ref<const Eigen::VectorXcd>& q) const {
    const Eigen::VectorXcd augmented =
        problem_.denominator_values(q).cwiseProduct(problem_.outputs);
    return beta_ * (sigma_pp_ * (problem_.psi_p.transpose().cast<Complex>() * augmented));
  }

  /// One draw from CN(mu_p|m,q, Sigma_pp|m).
  Eigen::VectorXcd draw_p(const Eigen::Ref<const Eigen::VectorXcd>& q, RngStream& rng) const {
    Eigen::VectorXcd zeta(n_p());
    for (int i = 0; i < n_p(); ++i) zeta(i) = rng.proper_normal();
    return conditional_mean_p(q) + sigma_chol_.cast<Complex>() * zeta;
  }

 private:
  SblProblem problem_;
  Eigen::MatrixXcd gram_;  // Upsilon^H C^{-1} Upsilon
  Eigen::MatrixXd sigma_pp_;
  Eigen::MatrixXd sigma_chol_;
  Eigen::VectorXd alpha_p_;
  Eigen::VectorXd alpha_q_;
  double beta_ = 0.0;
};

/// TMCMC draws from the denominator-coefficient posterior of one model,
/// run in the 2 n_q real embedding. Rows of the result are q samples.
inline Eigen::MatrixXcd sample_q_posterior(const RpceModel& model, int n_alpha,
                                           const TmcmcConfig& config, RngStream& rng) {
  const DenominatorPosterior posterior(model);
  const int n_q = posterior.n_q();
  const auto lift = [n_q](const Eigen::VectorXd& v) -> Eigen::VectorXcd {
    return v.head(n_q) + Complex(0, 1) * Eigen::VectorXcd(v.tail(n_q).cast<Complex>());
  };

  TmcmcConfig stage_config = config;
  stage_config.samples_per_stage = std::max(config.samples_per_stage, n_alpha);
  const TmcmcResult result = tmcmc_sample(
      2 * n_q,
      [&](RngStream& r) {
        // Collapse the flat global-phase direction at the source: the target
        // is phase-invariant and downstream consumers are phase-covariant,
        // while the ring geometry defeats the adaptive Gaussian proposals.
        Eigen::VectorXcd q = posterior.prior_draw(r);
        const double lead = std::abs(q(0));
        if (lead > kDenominatorFloor) q *= std::conj(q(0)) / lead;
        Eigen::VectorXd v(2 * n_q);
        v.head(n_q) = q.real();
        v.tail(n_q) = q.imag();
        return v;
      },
      [&](const Eigen::VectorXd& v) { return posterior.log_prior(lift(v)); },
      [&](const Eigen::VectorXd& v) { return posterior.log_likelihood(lift(v)); },
      stage_config, rng);

  Eigen::MatrixXcd q_samples(n_alpha, n_q);
  for (int k = 0; k < n_alpha; ++k) {
    q_samples.row(k) = lift(result.samples.row(k).transpose()).transpose();
  }
  return q_samples;
}

inline Eigen::VectorXcd sample_p_given_q(const RpceModel& model,
                                         const Eigen::Ref<const Eigen::VectorXcd>& q_sample,
                                         RngStream& rng) {
  return DenominatorPosterior(model).draw_p(q_sample, rng);
}

/// Surrogate-error draw at u conditional on q: zeta sqrt(1/beta) / |Q(u; q)|
/// with zeta a unit proper normal. Deterministic in zeta, which the
/// acquisition path freezes per MC index (common random numbers).
inline std::optional<Complex> sample_error_given_q(
    const RpceModel& model, const Eigen::Ref<const Eigen::VectorXcd>& q_sample,
    const Eigen::Ref<const Eigen::VectorXd>& u, Complex zeta) {
  const Eigen::RowVectorXd psi_q = basis_row(u, model.denominator_indices);
  const Complex denom = (psi_q.cast<Complex>() * q_sample).value();
  if (std::abs(denom) <= kSampleDenominatorFloor * q_sample.norm()) return std::nullopt;
  return zeta / (std::sqrt(model.beta_s) * std::abs(denom));
}

inline std::optional<Complex> sample_error_given_q(
    const RpceModel& model, const Eigen::Ref<const Eigen::VectorXcd>& q_sample,
    const Eigen::Ref<const Eigen::VectorXd>& u, RngStream& rng) {
  return sample_error_given_q(model, q_sample, u, rng.proper_normal());
}

/// Coherent posterior draws for one model: row k of q and p belong to the
/// same hierarchy sample, and zeta(k) is the frozen unit error normal.
struct CoefficientSamples {
  Eigen::MatrixXcd q;  // n_alpha x n_q
  Eigen::MatrixXcd p;  // n_alpha x n_p
  Eigen::VectorXcd zeta;
};

struct SurrogateEnsemble {
  std::vector<RpceModel> models;
  std::vector<CoefficientSamples> samples;
  std::uint64_t master_seed = 0;

  int n_models() const { return static_cast<int>(models.size()); }
  int n_alpha() const {
    return samples.empty() ? 0 : static_cast<int>(samples.front().q.rows());
  }
};

/// Hierarchical sampling for every model: q via TMCMC, one paired p draw per
/// q sample, one frozen unit error normal per MC index. Deterministic given
/// the master seed; per-model streams are derived, so models may be
/// processed in any order.
inline SurrogateEnsemble build_ensemble_samples(std::vector<RpceModel> models, int n_alpha,
                                                const TmcmcConfig& config,
                                                std::uint64_t master_seed) {
  SurrogateEnsemble ensemble;
  ensemble.master_seed = master_seed;
  ensemble.samples.resize(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    RngStream rng_q(derive_seed(master_seed, i, 0));
    RngStream rng_p(derive_seed(master_seed, i, 1));
    RngStream rng_zeta(derive_seed(master_seed, i, 2));
    const DenominatorPosterior posterior(models[i]);
    CoefficientSamples& out = ensemble.samples[i];
    out.q = sample_q_posterior(models[i], n_alpha, config, rng_q);
    out.p.resize(n_alpha, posterior.n_p());
    out.zeta.resize(n_alpha);
    for (int k = 0; k < n_alpha; ++k) {
      out.p.row(k) = posterior.draw_p(out.q.row(k).transpose(), rng_p).transpose();
      out.zeta(k) = rng_zeta.proper_normal();
    }
  }
  ensemble.models = std::move(models);
  return ensemble;
}

/// Prediction vector for hierarchy sample k: y_i = P_i/Q_i + error draw.
/// Rejected (nullopt) when any denominator is numerically singular at u.
inline std::optional<Eigen::VectorXcd> ensemble_sample_prediction(
    const SurrogateEnsemble& ensemble, int k, const Eigen::Ref<const Eigen::VectorXd>& u) {
  Eigen::VectorXcd y(ensemble.n_models());
  for (int i = 0; i < ensemble.n_models(); ++i) {
    const RpceModel& model = ensemble.models[i];
    const CoefficientSamples& s = ensemble.samples[i];
    const Eigen::RowVectorXd psi_p = basis_row(u, model.numerator_indices);
    const Eigen::RowVectorXd psi_q = basis_row(u, model.denominator_indices);
    const Complex num = (psi_p.cast<Complex>() * s.p.row(k).transpose()).value();
    const Complex den = (psi_q.cast<Complex>() * s.q.row(k).transpose()).value();
    if (std::abs(den) <= kSampleDenominatorFloor * s.q.row(k).norm()) return std::nullopt;
    y(i) = num / den + s.zeta(k) / (std::sqrt(model.beta_s) * std::abs(den));
  }
  return y;
}

/// Plug-in prediction: conditional numerator mean and denominator MAP, zero error.
inline std::optional<Eigen::VectorXcd> ensemble_plugin_prediction(
    const SurrogateEnsemble& ensemble, const Eigen::Ref<const Eigen::VectorXd>& u) {
  Eigen::VectorXcd y(ensemble.n_models());
  for (int i = 0; i < ensemble.n_models(); ++i) {
    const RpceModel& model = ensemble.models[i];
    const auto parts = model.evaluate_parts(u);
    if (std::abs(parts.denominator) <= kSampleDenominatorFloor * model.q.norm()) {
      return std::nullopt;
    }
    y(i) = parts.numerator / parts.denominator;
  }
  return y;
}

}  // namespace rpcebo
