#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rpcebo/optim.hpp"
#include "rpcebo/pce_basis.hpp"
#include "rpcebo/rpce_model.hpp"

namespace rpcebo {

using Complex = std::complex<double>;

struct TrainingData {
  Eigen::MatrixXd inputs;    // n_tr x d, standard-normal space
  Eigen::VectorXcd outputs;  // n_tr

  int n_tr() const { return static_cast<int>(inputs.rows()); }
  int dimension() const { return static_cast<int>(inputs.cols()); }

  /// Exact duplicate design rows degrade the regression but are legal.
  bool has_duplicate_rows() const {
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < inputs.rows(); ++j) {
        const double scale = std::max(inputs.row(i).norm(), 1.0);
        if ((inputs.row(i) - inputs.row(j)).norm() <= 1e-12 * scale) return true;
      }
    }
    return false;
  }
};

enum class HyperUpdateScheme {
  kDirect,  // closed-form fixed point of the evidence derivative
  kGamma,   // gamma-quantity variant of the same fixed point
};

struct TrainerConfig {
  int m_p = 2;
  int m_q = 2;
  int max_iterations = 200;
  double tol_log10_alpha = 1e-3;
  double tol_log10_beta = 1e-3;
  double alpha_p_max = 1e8;
  double alpha_q_max = 1e8;
  double normalization_exponent = 2.0;  // k in |q|_k
  double alpha_init = 1e-6;
  double beta_init = 0.0;  // <= 0 selects the data-scaled default
  double beta_cap = 1e14;
  HyperUpdateScheme update_scheme = HyperUpdateScheme::kDirect;
  QuasiNewtonSettings inner{8, 1e-8, 200, 1e-4, 0.01};
};

/// Design quantities shared by every operation on one training set:
/// the two basis matrices and Upsilon = diag(m) Psi_q.
struct SblProblem {
  Eigen::MatrixXd psi_p;
  Eigen::MatrixXd psi_q;
  Eigen::VectorXcd outputs;
  Eigen::MatrixXcd upsilon;

  int n_tr() const { return static_cast<int>(psi_p.rows()); }
  int n_p() const { return static_cast<int>(psi_p.cols()); }
  int n_q() const { return static_cast<int>(psi_q.cols()); }

  static SblProblem build(const TrainingData& data, const MultiIndexSet& p_set,
                          const MultiIndexSet& q_set) {
    SblProblem problem;
    problem.psi_p = basis_matrix(data.inputs, p_set);
    problem.psi_q = basis_matrix(data.inputs, q_set);
    problem.outputs = data.outputs;
    problem.upsilon =
        data.outputs.asDiagonal() * problem.psi_q.cast<Complex>();
    return problem;
  }

  static SblProblem from_matrices(Eigen::MatrixXd psi_p, Eigen::MatrixXd psi_q,
                                  Eigen::VectorXcd outputs) {
    SblProblem problem;
    problem.psi_p = std::move(psi_p);
    problem.psi_q = std::move(psi_q);
    problem.outputs = std::move(outputs);
    problem.upsilon = problem.outputs.asDiagonal() * problem.psi_q.cast<Complex>();
    return problem;
  }

  Eigen::VectorXcd denominator_values(const Eigen::Ref<const Eigen::VectorXcd>& q) const {
    return psi_q.cast<Complex>() * q;
  }
};

struct NumeratorPosterior {
  Eigen::VectorXcd mean;
  Eigen::MatrixXd covariance;  // real symmetric: design matrices are real
  double log_det_covariance = 0.0;
};

/// Covariance part of the conditional posterior; independent of q.
/// Sigma_pp|m = (Lambda_pp + beta Psi_p^T Psi_p)^{-1}.
inline NumeratorPosterior numerator_posterior_covariance_only(
    const SblProblem& problem, const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
    double beta_s) {
  Eigen::MatrixXd precision = problem.psi_p.transpose() * problem.psi_p * beta_s;
  precision.diagonal() += alpha_p;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(precision);
  if (ldlt.info() != Eigen::Success) {
    throw std::runtime_error("numerator_posterior: normal-equations matrix not factorizable");
  }
  NumeratorPosterior post;
  post.covariance = ldlt.solve(Eigen::MatrixXd::Identity(problem.n_p(), problem.n_p()));
  post.log_det_covariance = -ldlt.vectorD().array().log().sum();
  return post;
}

/// mu_p|m,q = beta Sigma Psi_p^T (Q m) on top of the q-free covariance.
inline NumeratorPosterior numerator_posterior(const SblProblem& problem,
                                              const Eigen::Ref<const Eigen::VectorXcd>& q,
                                              const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                                              double beta_s) {
  const Eigen::VectorXcd denom = problem.denominator_values(q);
  const double denom_max = denom.cwiseAbs().maxCoeff();
  if (denom.cwiseAbs().minCoeff() <= 1e-14 * denom_max) {
    throw std::runtime_error("numerator_posterior: denominator vanishes at a training point");
  }
  NumeratorPosterior post = numerator_posterior_covariance_only(problem, alpha_p, beta_s);
  const Eigen::VectorXcd augmented = denom.cwiseProduct(problem.outputs);
  post.mean = beta_s * (post.covariance * (problem.psi_p.transpose().cast<Complex>() * augmented));
  return post;
}

/// C = beta^{-1} I + Psi_p Lambda_pp^{-1} Psi_p^T, assembled densely.
/// Used as the oracle counterpart of the Woodbury forms below.
inline Eigen::MatrixXd c_dense(const SblProblem& problem,
                               const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                               double beta_s) {
  Eigen::MatrixXd c = problem.psi_p * alpha_p.cwiseInverse().asDiagonal() *
                      problem.psi_p.transpose();
  c.diagonal().array() += 1.0 / beta_s;
  return c;
}

/// C^{-1} = beta I - beta^2 Psi_p Sigma_pp|m Psi_p^T.
inline Eigen::MatrixXd c_inverse(const SblProblem& problem,
                                 const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                                 double beta_s) {
  const NumeratorPosterior post =
      numerator_posterior_covariance_only(problem, alpha_p, beta_s);
  Eigen::MatrixXd cinv = -beta_s * beta_s * problem.psi_p * post.covariance *
                         problem.psi_p.transpose();
  cinv.diagonal().array() += beta_s;
  return cinv;
}

/// ln det C = -ln det Sigma_pp|m - ln det Lambda_pp - n_tr ln beta.
inline double c_log_det(const SblProblem& problem,
                        const Eigen::Ref<const Eigen::VectorXd>& alpha_p, double beta_s) {
  const NumeratorPosterior post =
      numerator_posterior_covariance_only(problem, alpha_p, beta_s);
  return -post.log_det_covariance - alpha_p.array().log().sum() -
         problem.n_tr() * std::log(beta_s);
}

/// -H_qq = Upsilon^H C^{-1} Upsilon + Lambda_qq; Hermitian positive definite
/// and independent of q.
inline Eigen::MatrixXcd neg_hessian_qq(const SblProblem& problem,
                                       const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                                       const Eigen::Ref<const Eigen::VectorXd>& alpha_q,
                                       double beta_s) {
  const Eigen::MatrixXd cinv = c_inverse(problem, alpha_p, beta_s);
  Eigen::MatrixXcd a = problem.upsilon.adjoint() * cinv * problem.upsilon;
  a.diagonal() += alpha_q.cast<Complex>();
  a = 0.5 * (a + a.adjoint().eval());  // kill rounding skew
  return a;
}

/// Log-posterior of the denominator coefficients up to a constant:
/// ln det QQ^H - q^H (-H_qq) q. Returns -inf when Q vanishes at a
/// training point (objective-invalid).
inline double q_objective(const SblProblem& problem,
                          const Eigen::Ref<const Eigen::VectorXcd>& q,
                          const Eigen::Ref<const Eigen::MatrixXcd>& neg_h) {
  const Eigen::VectorXcd denom = problem.denominator_values(q);
  double log_det = 0.0;
  for (Eigen::Index k = 0; k < denom.size(); ++k) {
    const double mag = std::abs(denom(k));
    if (mag < kDenominatorFloor) return -std::numeric_limits<double>::infinity();
    log_det += 2.0 * std::log(mag);
  }
  const double quad = (q.dot(neg_h * q)).real();
  return log_det - quad;
}

inline double q_objective(const SblProblem& problem,
                          const Eigen::Ref<const Eigen::VectorXcd>& q,
                          const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                          const Eigen::Ref<const Eigen::VectorXd>& alpha_q, double beta_s) {
  return q_objective(problem, q, neg_hessian_qq(problem, alpha_p, alpha_q, beta_s));
}

/// Wirtinger derivative of q_objective with respect to conj(q):
/// Psi_q^T (Psi_q conj(q))^{o-1} - (-H_qq) q.
inline Eigen::VectorXcd q_conj_cogradient(const SblProblem& problem,
                                          const Eigen::Ref<const Eigen::VectorXcd>& q,
                                          const Eigen::Ref<const Eigen::MatrixXcd>& neg_h) {
  const Eigen::VectorXcd denom_conj = problem.denominator_values(q).conjugate();
  return problem.psi_q.transpose().cast<Complex>() * denom_conj.cwiseInverse() -
         neg_h * q;
}

/// |q|_k normalization followed by the phase gauge: the leading retained
/// coefficient is rotated to be real-positive. The gauge removes the phase
/// invariance of the rational; evaluate() is unaffected.
inline Eigen::VectorXcd gauge_normalized(const Eigen::Ref<const Eigen::VectorXcd>& q,
                                         double k = 2.0) {
  double norm;
  if (k == 2.0) {
    norm = q.norm();
  } else if (k == 1.0) {
    norm = q.cwiseAbs().sum();
  } else {
    norm = std::pow(q.cwiseAbs().array().pow(k).sum(), 1.0 / k);
  }
  if (!(norm > 0.0)) throw std::runtime_error("gauge_normalized: zero coefficient vector");
  Eigen::VectorXcd out = q / norm;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double mag = std::abs(out(i));
    if (mag > kDenominatorFloor) {
      out *= std::conj(out(i) / mag);
      break;
    }
  }
  return out;
}

struct QMapResult {
  Eigen::VectorXcd q;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// MAP of the denominator coefficients by L-BFGS over the real embedding
/// [Re q; Im q], with gradient [2 Re g; 2 Im g] of the conjugate cogradient g.
/// The gradient tolerance applies to the cogradient norm and scales with n_q.
inline QMapResult maximize_q_posterior(const SblProblem& problem,
                                       const Eigen::Ref<const Eigen::VectorXcd>& q_init,
                                       const Eigen::Ref<const Eigen::MatrixXcd>& neg_h,
                                       const QuasiNewtonSettings& settings) {
  const int n_q = problem.n_q();
  const auto embed = [n_q](const Eigen::VectorXcd& q) {
    Eigen::VectorXd v(2 * n_q);
    v.head(n_q) = q.real();
    v.tail(n_q) = q.imag();
    return v;
  };
  const auto lift = [n_q](const Eigen::VectorXd& v) {
    return Eigen::VectorXcd(v.head(n_q) + Complex(0, 1) * v.tail(n_q));
  };

  const auto objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd& grad) -> double {
    const Eigen::VectorXcd q = lift(v);
    const double value = q_objective(problem, q, neg_h);
    if (!std::isfinite(value)) {
      grad.setZero(2 * n_q);
      return std::numeric_limits<double>::quiet_NaN();
    }
    const Eigen::VectorXcd g = q_conj_cogradient(problem, q, neg_h);
    grad.resize(2 * n_q);
    grad.head(n_q) = 2.0 * g.real();
    grad.tail(n_q) = 2.0 * g.imag();
    return value;
  };

  QuasiNewtonSettings scaled = settings;
  scaled.gradient_tolerance = 2.0 * settings.gradient_tolerance * n_q;
  const QuasiNewtonResult res = lbfgs_maximize(objective, embed(q_init), scaled);

  QMapResult out;
  out.q = lift(res.x);
  out.objective = res.value;
  out.converged = res.converged;
  out.iterations = res.iterations;
  return out;
}

/// Delta = beta Upsilon^H Psi_p Sigma_pp|m (n_q x n_p coupling block).
inline Eigen::MatrixXcd delta_matrix(const SblProblem& problem,
                                     const Eigen::Ref<const Eigen::MatrixXd>& sigma_pp,
                                     double beta_s) {
  return beta_s * (problem.upsilon.adjoint() *
                   (problem.psi_p * sigma_pp).cast<Complex>());
}

/// alpha_p,i = 1 / (Sigma_ii + |mu_i|^2 + [Delta^H (-H)^{-1} Delta]_ii).
inline Eigen::VectorXd update_alpha_p(const NumeratorPosterior& posterior,
                                      const Eigen::Ref<const Eigen::MatrixXcd>& delta,
                                      const Eigen::Ref<const Eigen::MatrixXcd>& neg_h) {
  const Eigen::LLT<Eigen::MatrixXcd> llt(neg_h);
  const Eigen::MatrixXcd solved = llt.solve(delta);
  const int n_p = static_cast<int>(posterior.mean.size());
  Eigen::VectorXd alpha(n_p);
  for (int i = 0; i < n_p; ++i) {
    const double coupling = delta.col(i).dot(solved.col(i)).real();
    const double denom = posterior.covariance(i, i) + std::norm(posterior.mean(i)) + coupling;
    alpha(i) = std::min(1.0 / denom, 1e300);
  }
  return alpha;
}

/// alpha_q,i = 1 / (|q_i|^2 + [(-H)^{-1}]_ii).
inline Eigen::VectorXd update_alpha_q(const Eigen::Ref<const Eigen::VectorXcd>& q,
                                      const Eigen::Ref<const Eigen::MatrixXcd>& neg_h) {
  const int n_q = static_cast<int>(q.size());
  const Eigen::MatrixXcd inv =
      Eigen::LLT<Eigen::MatrixXcd>(neg_h).solve(Eigen::MatrixXcd::Identity(n_q, n_q));
  Eigen::VectorXd alpha(n_q);
  for (int i = 0; i < n_q; ++i) {
    alpha(i) = std::min(1.0 / (std::norm(q(i)) + inv(i, i).real()), 1e300);
  }
  return alpha;
}

/// beta_S = n_tr / (|Qm - Psi_p mu|^2 + tr(Sigma Psi^T Psi) + tr((-H)^{-1} O^H O))
/// with O = (I - beta Psi_p Sigma Psi_p^T) Upsilon evaluated at the current beta.
inline double update_beta(const SblProblem& problem,
                          const Eigen::Ref<const Eigen::VectorXcd>& q,
                          const NumeratorPosterior& posterior,
                          const Eigen::Ref<const Eigen::MatrixXcd>& neg_h,
                          double beta_current) {
  const Eigen::VectorXcd augmented = problem.denominator_values(q).cwiseProduct(problem.outputs);
  const Eigen::VectorXcd residual = augmented - problem.psi_p.cast<Complex>() * posterior.mean;
  const double fit = residual.squaredNorm();
  const Eigen::MatrixXd projected = problem.psi_p * posterior.covariance;
  const double trace_sigma = projected.cwiseProduct(problem.psi_p).sum();
  const Eigen::MatrixXcd omikron =
      problem.upsilon -
      beta_current * (projected.cast<Complex>() *
                      (problem.psi_p.transpose().cast<Complex>() * problem.upsilon));
  const Eigen::MatrixXcd gram = omikron.adjoint() * omikron;
  const double trace_h = Eigen::LLT<Eigen::MatrixXcd>(neg_h).solve(gram).trace().real();
  return problem.n_tr() / (fit + trace_sigma + trace_h);
}

/// Gamma-quantity variants of the fixed-point updates. Transiently negative
/// gamma values (possible away from the fixed point) are clamped.
inline Eigen::VectorXd update_alpha_p_gamma(const NumeratorPosterior& posterior,
                                            const Eigen::Ref<const Eigen::MatrixXcd>& delta,
                                            const Eigen::Ref<const Eigen::MatrixXcd>& neg_h,
                                            const Eigen::Ref<const Eigen::VectorXd>& alpha_current) {
  const Eigen::LLT<Eigen::MatrixXcd> llt(neg_h);
  const Eigen::MatrixXcd solved = llt.solve(delta);
  const int n_p = static_cast<int>(posterior.mean.size());
  Eigen::VectorXd alpha(n_p);
  for (int i = 0; i < n_p; ++i) {
    const double gamma = std::clamp(1.0 - alpha_current(i) * posterior.covariance(i, i), 1e-12, 1.0);
    const double coupling = delta.col(i).dot(solved.col(i)).real();
    alpha(i) = std::min(gamma / (std::norm(posterior.mean(i)) + coupling + 1e-300), 1e300);
  }
  return alpha;
}

inline Eigen::VectorXd update_alpha_q_gamma(const Eigen::Ref<const Eigen::VectorXcd>& q,
                                            const Eigen::Ref<const Eigen::MatrixXcd>& neg_h,
                                            const Eigen::Ref<const Eigen::VectorXd>& alpha_current) {
  const int n_q = static_cast<int>(q.size());
  const Eigen::MatrixXcd inv =
      Eigen::LLT<Eigen::MatrixXcd>(neg_h).solve(Eigen::MatrixXcd::Identity(n_q, n_q));
  Eigen::VectorXd alpha(n_q);
  for (int i = 0; i < n_q; ++i) {
    const double gamma = std::clamp(1.0 - alpha_current(i) * inv(i, i).real(), 1e-12, 1.0);
    alpha(i) = std::min(gamma / (std::norm(q(i)) + 1e-300), 1e300);
  }
  return alpha;
}

inline double update_beta_gamma(const SblProblem& problem,
                                const Eigen::Ref<const Eigen::VectorXcd>& q,
                                const NumeratorPosterior& posterior,
                                const Eigen::Ref<const Eigen::MatrixXcd>& neg_h,
                                const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                                double beta_current) {
  const Eigen::VectorXcd augmented = problem.denominator_values(q).cwiseProduct(problem.outputs);
  const Eigen::VectorXcd residual = augmented - problem.psi_p.cast<Complex>() * posterior.mean;
  const double fit = residual.squaredNorm();
  const Eigen::MatrixXd projected = problem.psi_p * posterior.covariance;
  const Eigen::MatrixXcd omikron =
      problem.upsilon -
      beta_current * (projected.cast<Complex>() *
                      (problem.psi_p.transpose().cast<Complex>() * problem.upsilon));
  const Eigen::MatrixXcd gram = omikron.adjoint() * omikron;
  const double trace_h = Eigen::LLT<Eigen::MatrixXcd>(neg_h).solve(gram).trace().real();
  double gamma_sum = 0.0;
  for (int i = 0; i < problem.n_p(); ++i) {
    gamma_sum += std::clamp(1.0 - alpha_p(i) * posterior.covariance(i, i), 1e-12, 1.0);
  }
  return std::max(problem.n_tr() - gamma_sum, 1e-12) / (fit + trace_h + 1e-300);
}

/// Laplace log-evidence of Eq. (37) scope: marginal likelihood at q plus the
/// denominator prior and the Laplace volume. The q-dependent ln det QQ^H is
/// included so the value is comparable across pruned basis sets.
inline double evidence_objective(const SblProblem& problem,
                                 const Eigen::Ref<const Eigen::VectorXcd>& q,
                                 const Eigen::Ref<const Eigen::VectorXd>& alpha_p,
                                 const Eigen::Ref<const Eigen::VectorXd>& alpha_q,
                                 double beta_s) {
  const NumeratorPosterior post = numerator_posterior(problem, q, alpha_p, beta_s);
  const Eigen::VectorXcd augmented = problem.denominator_values(q).cwiseProduct(problem.outputs);
  const Eigen::VectorXcd residual = augmented - problem.psi_p.cast<Complex>() * post.mean;
  const double quad = beta_s * augmented.dot(residual).real();

  const Eigen::MatrixXcd neg_h = neg_hessian_qq(problem, alpha_p, alpha_q, beta_s);
  const Eigen::LLT<Eigen::MatrixXcd> llt(neg_h);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("evidence_objective: -H_qq not positive definite");
  }
  double log_det_h = 0.0;
  for (Eigen::Index i = 0; i < neg_h.rows(); ++i) {
    log_det_h += 2.0 * std::log(llt.matrixLLT()(i, i).real());
  }

  double log_det_qq = 0.0;
  const Eigen::VectorXcd denom = problem.denominator_values(q);
  for (Eigen::Index k = 0; k < denom.size(); ++k) {
    const double mag = std::abs(denom(k));
    if (mag < kDenominatorFloor) return -std::numeric_limits<double>::infinity();
    log_det_qq += 2.0 * std::log(mag);
  }

  const double prior_quad = (q.array().abs2() * alpha_q.array()).sum();
  return log_det_qq + problem.n_tr() * std::log(beta_s) + post.log_det_covariance +
         alpha_p.array().log().sum() - quad + alpha_q.array().log().sum() - prior_quad -
         log_det_h - problem.n_tr() * std::log(M_PI);
}

namespace detail {

inline std::vector<int> keep_below(const Eigen::VectorXd& alpha, double threshold,
                                   int always_keep = -1) {
  std::vector<int> keep;
  for (int i = 0; i < alpha.size(); ++i) {
    if (alpha(i) < threshold || i == always_keep) keep.push_back(i);
  }
  return keep;
}

template <typename Vec>
Vec select(const Vec& v, const std::vector<int>& idx) {
  Vec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

inline Eigen::MatrixXd select_cols(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

}  // namespace detail

/// Algorithm: sparse Bayesian training of one rational expansion.
/// Outer loop: prune numerator -> denominator MAP + k-normalization + gauge ->
/// prune denominator -> conditional numerator posterior -> hyperparameter
/// updates, until the hyperparameters stall in log-scale or the iteration
/// budget is exhausted. The constant denominator basis is never pruned, so
/// the plain-polynomial fallback Q = const stays reachable.
inline RpceModel train(const TrainingData& data, const TrainerConfig& config) {
  if (data.n_tr() < 2) {
    throw std::invalid_argument("train: need at least two training points");
  }
  if (data.outputs.size() != data.inputs.rows()) {
    throw std::invalid_argument("train: inputs/outputs size mismatch");
  }
  if (config.max_iterations < 1) {
    throw std::invalid_argument("train: max_iterations must be >= 1");
  }
  const int d = data.dimension();
  const MultiIndexSet p_set_full = total_degree_indices(d, config.m_p);
  const MultiIndexSet q_set_full = total_degree_indices(d, config.m_q);
  const SblProblem full = SblProblem::build(data, p_set_full, q_set_full);
  const int constant_q = q_set_full.constant_position();

  double beta = config.beta_init;
  if (!(beta > 0.0)) {
    const Complex mean = data.outputs.mean();
    const double variance =
        (data.outputs.array() - mean).abs2().sum() / data.n_tr();
    const double mean_square = data.outputs.array().abs2().sum() / data.n_tr();
    beta = 1.0 / std::max(0.1 * variance, 1e-9 * mean_square + 1e-300);
  }

  std::vector<int> active_p(static_cast<std::size_t>(full.n_p()));
  std::vector<int> active_q(static_cast<std::size_t>(full.n_q()));
  std::iota(active_p.begin(), active_p.end(), 0);
  std::iota(active_q.begin(), active_q.end(), 0);

  Eigen::VectorXd alpha_p = Eigen::VectorXd::Constant(full.n_p(), config.alpha_init);
  Eigen::VectorXd alpha_q = Eigen::VectorXd::Constant(full.n_q(), config.alpha_init);
  Eigen::VectorXcd q = Eigen::VectorXcd::Zero(full.n_q());
  q(constant_q) = 1.0;

  // Previous log-hyperparameters in the original index space, for the
  // convergence test over indices that survive consecutive iterations.
  Eigen::VectorXd prev_log_ap = Eigen::VectorXd::Constant(full.n_p(), std::nan(""));
  Eigen::VectorXd prev_log_aq = Eigen::VectorXd::Constant(full.n_q(), std::nan(""));
  double prev_log_beta = std::nan("");

  TrainingRecord record;
  record.n_tr = data.n_tr();
  record.duplicate_inputs = data.has_duplicate_rows();
  record.inputs = data.inputs;
  record.outputs = data.outputs;

  bool converged = false;
  bool q_map_ok = true;
  int iterations = 0;

  SblProblem active;
  NumeratorPosterior posterior;
  Eigen::MatrixXcd neg_h;
  Eigen::VectorXd ap_active, aq_active;
  Eigen::VectorXcd q_active;

  for (int iter = 0; iter < config.max_iterations && !converged; ++iter) {
    iterations = iter + 1;

    // 1. prune numerator basis
    {
      std::vector<int> keep_local =
          detail::keep_below(detail::select(alpha_p, active_p), config.alpha_p_max);
      std::vector<int> next;
      next.reserve(keep_local.size());
      for (int i : keep_local) next.push_back(active_p[static_cast<std::size_t>(i)]);
      active_p = std::move(next);
      if (active_p.empty()) {
        throw std::runtime_error("train: all numerator basis functions pruned (model vacuous)");
      }
    }

    active = SblProblem::from_matrices(detail::select_cols(full.psi_p, active_p),
                                       detail::select_cols(full.psi_q, active_q),
                                       full.outputs);
    ap_active = detail::select(alpha_p, active_p);
    aq_active = detail::select(alpha_q, active_q);
    q_active = detail::select(q, active_q);

    // 2. denominator MAP, normalization, gauge; -H_qq is q-independent
    neg_h = neg_hessian_qq(active, ap_active, aq_active, beta);
    const QMapResult qmap =
        maximize_q_posterior(active, q_active, neg_h, config.inner);
    q_map_ok = std::isfinite(qmap.objective);
    q_active = gauge_normalized(qmap.q, config.normalization_exponent);

    // 3. prune denominator basis (constant exempt)
    {
      int constant_local = -1;
      for (std::size_t i = 0; i < active_q.size(); ++i) {
        if (active_q[i] == constant_q) constant_local = static_cast<int>(i);
      }
      const std::vector<int> keep_local =
          detail::keep_below(aq_active, config.alpha_q_max, constant_local);
      if (static_cast<int>(keep_local.size()) < static_cast<int>(active_q.size())) {
        std::vector<int> next;
        Eigen::VectorXcd q_next(static_cast<Eigen::Index>(keep_local.size()));
        Eigen::VectorXd aq_next(static_cast<Eigen::Index>(keep_local.size()));
        Eigen::MatrixXcd h_next(keep_local.size(), keep_local.size());
        for (std::size_t i = 0; i < keep_local.size(); ++i) {
          next.push_back(active_q[static_cast<std::size_t>(keep_local[i])]);
          q_next(static_cast<Eigen::Index>(i)) = q_active(keep_local[i]);
          aq_next(static_cast<Eigen::Index>(i)) = aq_active(keep_local[i]);
          for (std::size_t j = 0; j < keep_local.size(); ++j) {
            h_next(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                neg_h(keep_local[i], keep_local[j]);
          }
        }
        active_q = std::move(next);
        q_active = gauge_normalized(q_next, config.normalization_exponent);
        aq_active = std::move(aq_next);
        neg_h = std::move(h_next);
        active.psi_q = detail::select_cols(full.psi_q, active_q);
        active.upsilon = active.outputs.asDiagonal() * active.psi_q.cast<Complex>();
      }
    }

    // 4. conditional numerator posterior
    posterior = numerator_posterior(active, q_active, ap_active, beta);

    // 5. hyperparameter updates
    Eigen::VectorXd ap_new, aq_new;
    double beta_new;
    const Eigen::MatrixXcd delta = delta_matrix(active, posterior.covariance, beta);
    if (config.update_scheme == HyperUpdateScheme::kDirect) {
      ap_new = update_alpha_p(posterior, delta, neg_h);
      aq_new = update_alpha_q(q_active, neg_h);
      beta_new = update_beta(active, q_active, posterior, neg_h, beta);
    } else {
      ap_new = update_alpha_p_gamma(posterior, delta, neg_h, ap_active);
      aq_new = update_alpha_q_gamma(q_active, neg_h, aq_active);
      beta_new = update_beta_gamma(active, q_active, posterior, neg_h, ap_active, beta);
    }
    beta_new = std::min(beta_new, config.beta_cap);

    // 6. convergence in log scale over surviving indices
    double max_delta_alpha = 0.0;
    for (std::size_t i = 0; i < active_p.size(); ++i) {
      const double cur = std::log10(ap_new(static_cast<Eigen::Index>(i)));
      const double prev = prev_log_ap(active_p[i]);
      if (!std::isnan(prev)) max_delta_alpha = std::max(max_delta_alpha, std::abs(cur - prev));
      prev_log_ap(active_p[i]) = cur;
    }
    for (std::size_t i = 0; i < active_q.size(); ++i) {
      const double cur = std::log10(aq_new(static_cast<Eigen::Index>(i)));
      const double prev = prev_log_aq(active_q[i]);
      if (!std::isnan(prev)) max_delta_alpha = std::max(max_delta_alpha, std::abs(cur - prev));
      prev_log_aq(active_q[i]) = cur;
    }
    const double log_beta = std::log10(beta_new);
    const double delta_beta = std::isnan(prev_log_beta)
                                  ? std::numeric_limits<double>::infinity()
                                  : std::abs(log_beta - prev_log_beta);
    prev_log_beta = log_beta;

    for (std::size_t i = 0; i < active_p.size(); ++i) {
      alpha_p(active_p[i]) = ap_new(static_cast<Eigen::Index>(i));
    }
    for (std::size_t i = 0; i < active_q.size(); ++i) {
      alpha_q(active_q[i]) = aq_new(static_cast<Eigen::Index>(i));
    }
    for (std::size_t i = 0; i < active_q.size(); ++i) {
      q(active_q[i]) = q_active(static_cast<Eigen::Index>(i));
    }
    beta = beta_new;

    record.retained_history.emplace_back(static_cast<int>(active_p.size()),
                                         static_cast<int>(active_q.size()));
    converged = iter > 0 && max_delta_alpha <= config.tol_log10_alpha &&
                delta_beta <= config.tol_log10_beta && q_map_ok;
  }

  // Refresh the posterior state at the final hyperparameters so the stored
  // moments are self-consistent with the stored alpha, beta and q.
  ap_active = detail::select(alpha_p, active_p);
  aq_active = detail::select(alpha_q, active_q);
  neg_h = neg_hessian_qq(active, ap_active, aq_active, beta);
  posterior = numerator_posterior(active, q_active, ap_active, beta);

  RpceModel model;
  model.numerator_indices = p_set_full.subset(active_p);
  model.denominator_indices = q_set_full.subset(active_q);
  model.p = posterior.mean;
  model.q = q_active;
  model.sigma_pp = posterior.covariance;
  model.neg_hessian_qq = neg_h;
  model.alpha_p = ap_active;
  model.alpha_q = aq_active;
  model.beta_s = beta;
  record.iterations = iterations;
  record.converged = converged;
  model.training = std::move(record);
  return model;
}

}  // namespace rpcebo
