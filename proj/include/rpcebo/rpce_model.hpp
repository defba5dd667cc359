#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rpcebo/pce_basis.hpp"

namespace rpcebo {

/// Raised when a rational evaluation hits a vanishing denominator. Callers
/// on sampling paths should prefer evaluate_parts and reject explicitly.
struct SingularDenominator : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDenominatorFloor = 1e-300;

/// Per-iteration training diagnostics plus the data the model was fitted
/// to. The data is retained because posterior sampling of the denominator
/// coefficients re-evaluates the training-point likelihood.
struct TrainingRecord {
  int n_tr = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::pair<int, int>> retained_history;  // (n_p, n_q) per iteration
  bool duplicate_inputs = false;
  Eigen::MatrixXd inputs;    // n_tr x d, standard-normal space
  Eigen::VectorXcd outputs;  // n_tr model evaluations
};

/// A trained rational expansion: retained basis index sets, complex
/// numerator/denominator coefficients, posterior moments and hyperparameters.
struct RpceModel {
  MultiIndexSet numerator_indices;
  MultiIndexSet denominator_indices;
  Eigen::VectorXcd p;  // numerator posterior mean
  Eigen::VectorXcd q;  // denominator MAP, |q|_2 = 1, leading coefficient real-positive
  Eigen::MatrixXd sigma_pp;        // numerator posterior covariance (real symmetric)
  Eigen::MatrixXcd neg_hessian_qq; // -H_qq, Hermitian positive definite
  Eigen::VectorXd alpha_p;
  Eigen::VectorXd alpha_q;
  double beta_s = 0.0;
  TrainingRecord training;

  int dimension() const { return numerator_indices.dimension; }

  struct Parts {
    std::complex<double> numerator;
    std::complex<double> denominator;
  };

  Parts evaluate_parts(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    const Eigen::RowVectorXd psi_p = basis_row(u, numerator_indices);
    const Eigen::RowVectorXd psi_q = basis_row(u, denominator_indices);
    return {(psi_p.cast<std::complex<double>>() * p).value(),
            (psi_q.cast<std::complex<double>>() * q).value()};
  }

  /// R(u) = P(u; p) / Q(u; q).
  std::complex<double> evaluate(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    const Parts parts = evaluate_parts(u);
    if (std::abs(parts.denominator) < kDenominatorFloor) {
      throw SingularDenominator("RpceModel::evaluate: denominator vanished");
    }
    return parts.numerator / parts.denominator;
  }

  /// Pointwise surrogate-error variance beta_S^{-1} |Q(u)|^{-2}.
  double error_variance(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    const Eigen::RowVectorXd psi_q = basis_row(u, denominator_indices);
    const std::complex<double> denom = (psi_q.cast<std::complex<double>>() * q).value();
    if (std::abs(denom) < kDenominatorFloor) {
      throw SingularDenominator("RpceModel::error_variance: denominator vanished");
    }
    return 1.0 / (beta_s * std::norm(denom));
  }
};

}  // namespace rpcebo
