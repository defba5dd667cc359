#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpcebo/inverse_problem.hpp"
#include "rpcebo/rng.hpp"

namespace rpcebo {

inline constexpr double kTwoPi = 6.28318530717958647692;

/// Receptance FRF e_out^T (K + i w C - w^2 M)^{-1} e_in via a complex solve.
/// DOF indices are zero-based.
inline std::complex<double> frf_receptance(const Eigen::Ref<const Eigen::MatrixXd>& stiffness,
                                           const Eigen::Ref<const Eigen::MatrixXd>& damping,
                                           const Eigen::Ref<const Eigen::MatrixXd>& mass,
                                           int out_dof, int in_dof, double omega) {
  const Eigen::Index n = stiffness.rows();
  if (out_dof < 0 || in_dof < 0 || out_dof >= n || in_dof >= n) {
    throw std::invalid_argument("frf_receptance: DOF index out of range");
  }
  Eigen::MatrixXcd dynamic_stiffness =
      stiffness.cast<std::complex<double>>() +
      std::complex<double>(0.0, omega) * damping.cast<std::complex<double>>() -
      (omega * omega) * mass.cast<std::complex<double>>();
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n);
  rhs(in_dof) = 1.0;
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(dynamic_stiffness);
  const Eigen::VectorXcd solution = lu.solve(rhs);
  if (!solution.allFinite()) {
    throw std::runtime_error("frf_receptance: singular dynamic stiffness matrix");
  }
  return solution(out_dof);
}

/// Two-mass chain with fully dependent spring, mass and damping values.
struct TwoDofParams {
  double k = 0.0;  // N/m
  double m = 0.0;  // kg
  double c = 0.0;  // N s/m

  static TwoDofParams make(double k, double m, double c) {
    if (!(k > 0.0 && m > 0.0 && c > 0.0)) {
      throw std::invalid_argument("TwoDofParams: parameters must be positive");
    }
    return TwoDofParams{k, m, c};
  }

  double damping_ratio() const { return 0.5 * c / std::sqrt(k * m); }

  Eigen::Matrix2d stiffness() const {
    Eigen::Matrix2d out;
    out << 2.0 * k, -k, -k, k;
    return out;
  }
  Eigen::Matrix2d damping() const {
    Eigen::Matrix2d out;
    out << 2.0 * c, -c, -c, c;
    return out;
  }
  Eigen::Matrix2d mass() const { return m * Eigen::Matrix2d::Identity(); }
};

/// Accelerance h_21 of the two-mass chain, closed form from the analytic
/// 2x2 inverse: response at mass 2, force at mass 1, times -w^2.
inline std::complex<double> frf_2dof_accel(const TwoDofParams& params, double omega) {
  using C = std::complex<double>;
  const C kc = params.k + C(0.0, omega) * params.c;
  const C a = 2.0 * kc - omega * omega * params.m;  // (1,1) of dynamic stiffness
  const C d = kc - omega * omega * params.m;        // (2,2)
  const C det = a * d - kc * kc;                    // off-diagonals are -kc
  if (det == C(0.0, 0.0)) {
    throw std::runtime_error("frf_2dof_accel: singular dynamic stiffness matrix");
  }
  return -omega * omega * kc / det;
}

/// Parametric linear model with matrix builders over the physical
/// parameters; responses at the listed output DOFs, frequency-major.
struct GeneralLinearModel {
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> stiffness;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> damping;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> mass;
  int input_dof = 0;
  std::vector<int> output_dofs;
  bool accelerance = false;

  Eigen::VectorXcd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& frequencies_hz) const {
    const Eigen::MatrixXd k = stiffness(x);
    const Eigen::MatrixXd c = damping(x);
    const Eigen::MatrixXd m = mass(x);
    Eigen::VectorXcd out(frequencies_hz.size() * static_cast<Eigen::Index>(output_dofs.size()));
    Eigen::Index flat = 0;
    for (Eigen::Index j = 0; j < frequencies_hz.size(); ++j) {
      const double omega = kTwoPi * frequencies_hz(j);
      for (int dof : output_dofs) {
        std::complex<double> h = frf_receptance(k, c, m, dof, input_dof, omega);
        if (accelerance) h *= -omega * omega;
        out(flat++) = h;
      }
    }
    return out;
  }
};

/// Noisy observations y_O = y exp(w + i phi) with (w, phi) zero-mean
/// Gaussians drawn from the error model's covariances. A noiseless set is
/// the exact model output.
inline ObservationSet synthesize_observations(const Eigen::Ref<const Eigen::VectorXcd>& y_true,
                                              const Eigen::Ref<const Eigen::VectorXd>& frequencies_hz,
                                              std::vector<std::string> sensor_ids,
                                              const ErrorModel& error_model, RngStream& rng,
                                              bool noiseless = false) {
  ObservationSet obs;
  obs.frequencies_hz = frequencies_hz;
  obs.sensor_ids = std::move(sensor_ids);
  obs.observations = y_true;
  if (y_true.size() != obs.n_observations()) {
    throw std::invalid_argument("synthesize_observations: response length mismatch");
  }
  if (!noiseless) {
    const Eigen::MatrixXd cov_w = error_model.covariance_log_amplitude(obs);
    const Eigen::MatrixXd cov_phi = error_model.covariance_phase(obs);
    const Eigen::LLT<Eigen::MatrixXd> llt_w(cov_w), llt_phi(cov_phi);
    if (llt_w.info() != Eigen::Success || llt_phi.info() != Eigen::Success) {
      throw std::runtime_error("synthesize_observations: covariance not positive definite");
    }
    const int n = obs.n_observations();
    Eigen::VectorXd xi_w(n), xi_phi(n);
    for (int i = 0; i < n; ++i) xi_w(i) = rng.normal();
    for (int i = 0; i < n; ++i) xi_phi(i) = rng.normal();
    const Eigen::VectorXd w = llt_w.matrixL() * xi_w;
    const Eigen::VectorXd phi = llt_phi.matrixL() * xi_phi;
    for (int i = 0; i < n; ++i) {
      obs.observations(i) *= std::exp(std::complex<double>(w(i), phi(i)));
    }
  }
  obs.validate();
  return obs;
}

}  // namespace rpcebo
