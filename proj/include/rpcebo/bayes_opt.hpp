#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "rpcebo/dyn_models.hpp"
#include "rpcebo/inverse_problem.hpp"
#include "rpcebo/optim.hpp"
#include "rpcebo/rng.hpp"
#include "rpcebo/sbl_trainer.hpp"
#include "rpcebo/surrogate_posterior.hpp"

namespace rpcebo {

/// Stratified Latin hypercube in standard-normal space: one point per
/// marginal stratum of (0,1)^d, mapped through the normal quantile.
inline Eigen::MatrixXd latin_hypercube(int n, int d, RngStream& rng) {
  if (n < 1 || d < 1) throw std::invalid_argument("latin_hypercube: n and d must be positive");
  Eigen::MatrixXd points(n, d);
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[rng.uniform_index(static_cast<std::uint64_t>(i + 1))]);
    }
    for (int i = 0; i < n; ++i) {
      const double stratified = (perm[static_cast<std::size_t>(i)] + rng.uniform()) / n;
      points(i, j) = standard_normal_quantile(stratified);
    }
  }
  return points;
}

/// Overflow-safe softplus relaxation gamma^{-1} ln(1 + exp(gamma x)).
inline double softplus(double x, double gamma) {
  const double gx = gamma * x;
  if (gx > 0.0) return x + std::log1p(std::exp(-gx)) / gamma;
  return std::log1p(std::exp(gx)) / gamma;
}

/// Batch evaluator of the sampled surrogate objective at one input point.
/// Basis rows are shared across the Monte Carlo samples, so the per-sample
/// cost reduces to coefficient dot products.
class SurrogateObjective {
 public:
  SurrogateObjective(const SurrogateEnsemble& ensemble, const InverseProblem& problem)
      : ensemble_(&ensemble), problem_(&problem) {
    q_norms_.resize(ensemble.samples.size());
    for (std::size_t i = 0; i < ensemble.samples.size(); ++i) {
      q_norms_[i] = ensemble.samples[i].q.rowwise().norm();
    }
  }

  int n_alpha() const { return ensemble_->n_alpha(); }
  const SurrogateEnsemble& ensemble() const { return *ensemble_; }
  const InverseProblem& problem() const { return *problem_; }

  /// Fills values(k) = h_hat(u; R^(k), eps^(k)); rejected samples get NaN.
  /// Returns the number of rejected samples.
  int sample_values(const Eigen::Ref<const Eigen::VectorXd>& u, Eigen::VectorXd& values) const {
    const int n_alpha = ensemble_->n_alpha();
    const int n_models = ensemble_->n_models();
    Eigen::MatrixXcd predictions(n_alpha, n_models);
    std::vector<char> rejected(static_cast<std::size_t>(n_alpha), 0);
    for (int i = 0; i < n_models; ++i) {
      const RpceModel& model = ensemble_->models[i];
      const CoefficientSamples& s = ensemble_->samples[i];
      const Eigen::VectorXcd psi_p =
          basis_row(u, model.numerator_indices).transpose().cast<Complex>();
      const Eigen::VectorXcd psi_q =
          basis_row(u, model.denominator_indices).transpose().cast<Complex>();
      const Eigen::VectorXcd numerators = s.p * psi_p;
      const Eigen::VectorXcd denominators = s.q * psi_q;
      const double inv_sqrt_beta = 1.0 / std::sqrt(model.beta_s);
      for (int k = 0; k < n_alpha; ++k) {
        const double mag = std::abs(denominators(k));
        if (mag <= kSampleDenominatorFloor * q_norms_[static_cast<std::size_t>(i)](k)) {
          rejected[static_cast<std::size_t>(k)] = 1;
          continue;
        }
        predictions(k, i) = numerators(k) / denominators(k) +
                            s.zeta(k) * (inv_sqrt_beta / mag);
      }
    }
    values.resize(n_alpha);
    int n_rejected = 0;
    for (int k = 0; k < n_alpha; ++k) {
      if (rejected[static_cast<std::size_t>(k)]) {
        values(k) = std::numeric_limits<double>::quiet_NaN();
        ++n_rejected;
        continue;
      }
      const auto h = problem_->misfit_log_posterior(u, predictions.row(k).transpose());
      if (h) {
        values(k) = *h;
      } else {
        values(k) = std::numeric_limits<double>::quiet_NaN();
        ++n_rejected;
      }
    }
    return n_rejected;
  }

  std::optional<double> plugin(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    return problem_->log_posterior_plugin(u, *ensemble_);
  }

 private:
  const SurrogateEnsemble* ensemble_;
  const InverseProblem* problem_;
  std::vector<Eigen::VectorXd> q_norms_;
};

/// Monte Carlo expected improvement with the softplus relaxation. Samples
/// with singular denominators contribute zero; when more than 10% of the
/// samples are rejected the point is acquisition-invalid (nullopt).
inline std::optional<double> expected_improvement(const Eigen::Ref<const Eigen::VectorXd>& u,
                                                  const SurrogateObjective& objective,
                                                  double h_max, double gamma,
                                                  long* rejected_counter = nullptr) {
  Eigen::VectorXd values;
  const int n_rejected = objective.sample_values(u, values);
  if (rejected_counter != nullptr) *rejected_counter += n_rejected;
  const int n_alpha = static_cast<int>(values.size());
  if (n_rejected * 10 > n_alpha) return std::nullopt;
  double acc = 0.0;
  for (int k = 0; k < n_alpha; ++k) {
    if (!std::isnan(values(k))) acc += softplus(values(k) - h_max, gamma);
  }
  return acc / n_alpha;
}

inline std::optional<double> expected_improvement(const Eigen::Ref<const Eigen::VectorXd>& u,
                                                  const SurrogateEnsemble& ensemble,
                                                  double h_max, const InverseProblem& problem,
                                                  double gamma) {
  return expected_improvement(u, SurrogateObjective(ensemble, problem), h_max, gamma);
}

struct ActiveLearningConfig {
  int n_init = 15;
  int n_budget = 50;
  int n_alpha = 100;
  double softplus_gamma = 100.0;
  double box_half_width = 6.0;  // u-space search box half-width
  PsoSettings pso;              // bounds derived from box_half_width
  TrainerConfig trainer;
  TmcmcConfig tmcmc;
  std::uint64_t seed = 0;
  Eigen::VectorXd reference_u;  // empty = no error trace
  std::ostream* progress = nullptr;
};

struct IterationRecord {
  int iteration = 0;
  int n_tr = 0;
  Eigen::VectorXd u_added;
  double h_added = 0.0;
  double h_max = 0.0;
  Eigen::VectorXd u_simple;
  double h_simple = 0.0;
  Eigen::VectorXd u_global;
  double h_global_plugin = 0.0;
  double eps_map_simple = std::numeric_limits<double>::quiet_NaN();
  double eps_map_global = std::numeric_limits<double>::quiet_NaN();
  long rejected_samples = 0;
  double seconds = 0.0;
};

struct ActiveLearningResult {
  std::vector<IterationRecord> records;
  SurrogateEnsemble ensemble;
  Eigen::MatrixXd design;            // evaluated inputs, row-wise
  Eigen::VectorXcd last_added;       // forward output at the last added point
  Eigen::MatrixXcd responses;        // design-point forward outputs
  Eigen::VectorXd objective_values;  // exact h at the design points
};

/// Best already-evaluated design point (the simple reward estimator).
inline std::pair<Eigen::VectorXd, double> simple_reward(
    const Eigen::Ref<const Eigen::MatrixXd>& design,
    const Eigen::Ref<const Eigen::VectorXd>& objective_values) {
  if (design.rows() == 0) throw std::invalid_argument("simple_reward: empty design");
  Eigen::Index best = 0;
  objective_values.maxCoeff(&best);
  return {design.row(best).transpose(), objective_values(best)};
}

/// Plug-in surrogate maximization (the global reward estimator).
inline std::pair<Eigen::VectorXd, double> global_reward(const SurrogateEnsemble& ensemble,
                                                        const InverseProblem& problem,
                                                        const PsoSettings& pso, RngStream& rng) {
  const auto objective = [&](const Eigen::VectorXd& u) {
    const auto value = problem.log_posterior_plugin(u, ensemble);
    return value ? *value : -std::numeric_limits<double>::infinity();
  };
  const PsoResult result = pso_maximize(objective, pso, rng);
  return {result.x, result.value};
}

namespace detail {

inline PsoSettings boxed(PsoSettings base, int d, double half_width) {
  base.lower = Eigen::VectorXd::Constant(d, -half_width);
  base.upper = Eigen::VectorXd::Constant(d, half_width);
  return base;
}

}  // namespace detail

/// Algorithm: active, sequential design through Bayesian optimization.
/// LHS initialization, per-observation surrogate training, Monte Carlo
/// expected-improvement maximization by particle swarm, enrichment, and
/// retraining until the evaluation budget is exhausted. Record 0 holds the
/// initial-design state; every later record follows one enrichment.
inline ActiveLearningResult run_active_learning(const InverseProblem& problem,
                                                const ActiveLearningConfig& config) {
  const int d = problem.dimension();
  const int n_obs = problem.observations().n_observations();
  if (config.n_init < d + 1) {
    throw std::invalid_argument("run_active_learning: n_init must be at least d + 1");
  }
  if (config.n_budget < config.n_init) {
    throw std::invalid_argument("run_active_learning: budget below initial design size");
  }
  const PsoSettings pso = detail::boxed(config.pso, d, config.box_half_width);

  ActiveLearningResult result;
  RngStream rng_lhs(derive_seed(config.seed, 1));
  result.design = latin_hypercube(config.n_init, d, rng_lhs);
  result.responses.resize(config.n_budget, n_obs);
  result.objective_values.resize(config.n_budget);
  for (int i = 0; i < config.n_init; ++i) {
    const Eigen::VectorXcd y = problem.forward(result.design.row(i).transpose());
    result.responses.row(i) = y.transpose();
    const auto h = problem.misfit_log_posterior(result.design.row(i).transpose(), y);
    result.objective_values(i) = h ? *h : -std::numeric_limits<double>::infinity();
  }

  const auto train_and_sample = [&](int n_tr, std::uint64_t sample_seed) {
    std::vector<RpceModel> models;
    models.reserve(static_cast<std::size_t>(n_obs));
    for (int i = 0; i < n_obs; ++i) {
      TrainingData data;
      data.inputs = result.design.topRows(n_tr);
      data.outputs = result.responses.col(i).head(n_tr);
      models.push_back(train(data, config.trainer));
    }
    return build_ensemble_samples(std::move(models), config.n_alpha, config.tmcmc, sample_seed);
  };

  const auto rebuild = [&](int n_tr, int iteration) {
    try {
      return train_and_sample(n_tr, derive_seed(config.seed, 500, static_cast<std::uint64_t>(iteration)));
    } catch (const std::exception&) {
      // one retry with a fresh sampling stream, then propagate
      return train_and_sample(n_tr, derive_seed(config.seed, 700, static_cast<std::uint64_t>(iteration)));
    }
  };

  const auto make_record = [&](int iteration, int n_tr, const SurrogateEnsemble& ensemble,
                               const Eigen::VectorXd& u_added, double h_added, long rejects,
                               double seconds) {
    IterationRecord record;
    record.iteration = iteration;
    record.n_tr = n_tr;
    record.u_added = u_added;
    record.h_added = h_added;
    record.h_max = result.objective_values.head(n_tr).maxCoeff();
    const auto simple = simple_reward(result.design.topRows(n_tr),
                                      result.objective_values.head(n_tr));
    record.u_simple = simple.first;
    record.h_simple = simple.second;
    RngStream rng_reward(derive_seed(config.seed, 2, static_cast<std::uint64_t>(iteration)));
    const auto global = global_reward(ensemble, problem, pso, rng_reward);
    record.u_global = global.first;
    record.h_global_plugin = global.second;
    if (config.reference_u.size() == d) {
      record.eps_map_simple = map_error(record.u_simple, config.reference_u);
      record.eps_map_global = map_error(record.u_global, config.reference_u);
    }
    record.rejected_samples = rejects;
    record.seconds = seconds;
    if (config.progress != nullptr) {
      (*config.progress) << iteration << ',' << n_tr << ',' << h_added << ','
                         << record.h_max << ',' << record.eps_map_simple << ','
                         << record.eps_map_global << '\n';
    }
    return record;
  };

  auto t0 = std::chrono::steady_clock::now();
  int n_tr = config.n_init;
  SurrogateEnsemble ensemble = rebuild(n_tr, 0);
  {
    const auto initial = simple_reward(result.design.topRows(n_tr),
                                       result.objective_values.head(n_tr));
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.records.push_back(
        make_record(0, n_tr, ensemble, initial.first, initial.second, 0, seconds));
  }

  for (int iteration = 1; n_tr < config.n_budget; ++iteration) {
    t0 = std::chrono::steady_clock::now();
    const double h_max = result.objective_values.head(n_tr).maxCoeff();
    const SurrogateObjective objective(ensemble, problem);
    long rejects = 0;
    const auto acquisition = [&](const Eigen::VectorXd& u) {
      const auto ei = expected_improvement(u, objective, h_max, config.softplus_gamma, &rejects);
      return ei ? *ei : -std::numeric_limits<double>::infinity();
    };
    RngStream rng_pso(derive_seed(config.seed, 3, static_cast<std::uint64_t>(iteration)));
    Eigen::VectorXd u_plus = pso_maximize(acquisition, pso, rng_pso).x;

    // keep retraining well-posed: nudge near-duplicate acquisition points
    RngStream rng_dup(derive_seed(config.seed, 4, static_cast<std::uint64_t>(iteration)));
    for (int i = 0; i < n_tr; ++i) {
      if ((result.design.row(i).transpose() - u_plus).norm() < 1e-8) {
        Eigen::VectorXd offset(d);
        for (int j = 0; j < d; ++j) offset(j) = rng_dup.normal();
        u_plus += 1e-3 * offset.normalized();
        break;
      }
    }

    const Eigen::VectorXcd y_plus = problem.forward(u_plus);
    const auto h_plus = problem.misfit_log_posterior(u_plus, y_plus);
    result.design.conservativeResize(n_tr + 1, d);
    result.design.row(n_tr) = u_plus.transpose();
    result.responses.row(n_tr) = y_plus.transpose();
    result.objective_values(n_tr) =
        h_plus ? *h_plus : -std::numeric_limits<double>::infinity();
    ++n_tr;

    ensemble = rebuild(n_tr, iteration);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.records.push_back(make_record(iteration, n_tr, ensemble, u_plus,
                                         result.objective_values(n_tr - 1), rejects, seconds));
  }

  result.ensemble = std::move(ensemble);
  result.last_added = result.responses.row(n_tr - 1).transpose();
  return result;
}

}  // namespace rpcebo
