#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "rpcebo/rng.hpp"

namespace rpcebo {

/// Proper (circularly symmetric) complex Gaussian with Hermitian
/// positive-definite covariance. The pseudo-covariance is structurally zero:
/// real and imaginary parts of each component carry half the variance.
class ProperComplexGaussian {
 public:
  ProperComplexGaussian(Eigen::VectorXcd mean, Eigen::MatrixXcd covariance)
      : mean_(std::move(mean)), covariance_(std::move(covariance)) {
    if (covariance_.rows() != covariance_.cols() ||
        covariance_.rows() != mean_.size()) {
      throw std::invalid_argument("ProperComplexGaussian: shape mismatch");
    }
    const double scale = covariance_.norm();
    if ((covariance_ - covariance_.adjoint()).norm() > 1e-12 * std::max(scale, 1.0)) {
      throw std::invalid_argument("ProperComplexGaussian: covariance not Hermitian");
    }
    llt_.compute(covariance_);
    if (llt_.info() != Eigen::Success) {
      throw std::runtime_error("ProperComplexGaussian: covariance not positive definite");
    }
    log_det_ = 0.0;
    const auto& factor = llt_.matrixLLT();
    for (Eigen::Index i = 0; i < factor.rows(); ++i) {
      log_det_ += 2.0 * std::log(factor(i, i).real());
    }
  }

  Eigen::Index dimension() const { return mean_.size(); }
  const Eigen::VectorXcd& mean() const { return mean_; }
  const Eigen::MatrixXcd& covariance() const { return covariance_; }

  /// One draw z = mean + L zeta with zeta i.i.d. unit proper normals.
  Eigen::VectorXcd sample(RngStream& rng) const {
    Eigen::VectorXcd zeta(dimension());
    for (Eigen::Index i = 0; i < zeta.size(); ++i) zeta(i) = rng.proper_normal();
    return mean_ + llt_.matrixL() * zeta;
  }

  /// n draws stacked row-wise (n x dimension).
  Eigen::MatrixXcd sample(int n, RngStream& rng) const {
    Eigen::MatrixXcd out(n, dimension());
    for (int k = 0; k < n; ++k) out.row(k) = sample(rng).transpose();
    return out;
  }

  /// ln f(z) = -n ln pi - ln det Sigma - (z-mu)^H Sigma^{-1} (z-mu).
  double log_density(const Eigen::Ref<const Eigen::VectorXcd>& z) const {
    if (z.size() != dimension()) {
      throw std::invalid_argument("log_density: dimension mismatch");
    }
    const Eigen::VectorXcd r = z - mean_;
    const double quad = r.dot(llt_.solve(r)).real();
    return -static_cast<double>(dimension()) * std::log(M_PI) - log_det_ - quad;
  }

 private:
  Eigen::VectorXcd mean_;
  Eigen::MatrixXcd covariance_;
  Eigen::LLT<Eigen::MatrixXcd> llt_;
  double log_det_ = 0.0;
};

}  // namespace rpcebo
