#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rpcebo/rng.hpp"

namespace rpcebo {

/// Objective values that are NaN or -inf mark invalid points; the optimizers
/// never adopt them as incumbents.
inline bool objective_valid(double v) {
  return std::isfinite(v);
}

struct PsoSettings {
  int n_particles = 500;
  double inertia = 0.729;
  double cognitive = 1.49445;
  double social = 1.49445;
  int max_iterations = 200;
  int stall_limit = 20;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::uint64_t seed = 0;
};

struct PsoResult {
  Eigen::VectorXd x;
  double value = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool found_valid = false;
};

/// Global-best particle swarm maximization over a box. Velocities are
/// clamped to the box width and positions reflected at the bounds.
/// Terminates when the incumbent has not improved by more than 1e-9 for
/// stall_limit iterations, or at max_iterations.
inline PsoResult pso_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                              const PsoSettings& settings, RngStream& rng) {
  const Eigen::Index d = settings.lower.size();
  if (d == 0 || settings.upper.size() != d) {
    throw std::invalid_argument("pso_maximize: bounds missing or inconsistent");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(settings.lower(i) < settings.upper(i)) ||
        !std::isfinite(settings.lower(i)) || !std::isfinite(settings.upper(i))) {
      throw std::invalid_argument("pso_maximize: bounds must be finite with lower < upper");
    }
  }
  const int n = settings.n_particles;
  const Eigen::VectorXd range = settings.upper - settings.lower;

  Eigen::MatrixXd pos(d, n), vel(d, n), best_pos(d, n);
  Eigen::VectorXd best_val(n);
  PsoResult result;
  result.x = Eigen::VectorXd::Zero(d);

  for (int p = 0; p < n; ++p) {
    for (Eigen::Index i = 0; i < d; ++i) {
      pos(i, p) = rng.uniform(settings.lower(i), settings.upper(i));
      vel(i, p) = rng.uniform(-range(i), range(i));
    }
    best_pos.col(p) = pos.col(p);
    const double v = f(pos.col(p));
    best_val(p) = objective_valid(v) ? v : -std::numeric_limits<double>::infinity();
    if (objective_valid(v) && v > result.value) {
      result.value = v;
      result.x = pos.col(p);
      result.found_valid = true;
    }
  }
  if (!result.found_valid) result.x = pos.col(0);

  int stall = 0;
  for (int iter = 0; iter < settings.max_iterations && stall < settings.stall_limit; ++iter) {
    result.iterations = iter + 1;
    double incumbent_before = result.value;
    for (int p = 0; p < n; ++p) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double towards_gbest = result.found_valid ? (result.x(i) - pos(i, p)) : 0.0;
        double v = settings.inertia * vel(i, p) +
                   settings.cognitive * rng.uniform() * (best_pos(i, p) - pos(i, p)) +
                   settings.social * rng.uniform() * towards_gbest;
        v = std::clamp(v, -range(i), range(i));
        double x = pos(i, p) + v;
        if (x < settings.lower(i)) {
          x = std::min(settings.upper(i), 2.0 * settings.lower(i) - x);
          v = -v;
        } else if (x > settings.upper(i)) {
          x = std::max(settings.lower(i), 2.0 * settings.upper(i) - x);
          v = -v;
        }
        pos(i, p) = x;
        vel(i, p) = v;
      }
      const double fv = f(pos.col(p));
      if (objective_valid(fv) && fv > best_val(p)) {
        best_val(p) = fv;
        best_pos.col(p) = pos.col(p);
        if (fv > result.value) {
          result.value = fv;
          result.x = pos.col(p);
          result.found_valid = true;
        }
      }
    }
    if (result.value > incumbent_before + 1e-9) {
      stall = 0;
    } else {
      ++stall;
    }
  }
  return result;
}

struct QuasiNewtonSettings {
  int memory = 8;
  double gradient_tolerance = 1e-8;
  int max_iterations = 200;
  double sufficient_decrease = 1e-4;  // Wolfe c1
  double curvature = 0.01;            // Wolfe c2, c1 < c2 < 1
};

struct QuasiNewtonResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct LineSearchEval {
  double phi;
  double dphi;
};

/// Cubic Hermite interpolation minimizer of phi on [a, b]; exact for
/// polynomials up to cubic order, which makes the surrounding line search
/// exact on quadratic objectives.
inline double cubic_minimizer(double a, double fa, double ga, double b, double fb,
                              double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (disc < 0.0) return 0.5 * (a + b);
  const double d2 = ((b > a) ? 1.0 : -1.0) * std::sqrt(disc);
  double t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
  if (!std::isfinite(t)) return 0.5 * (a + b);
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double margin = 1e-3 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

/// Limited-memory BFGS ascent with a strong-Wolfe line search
/// (two-loop recursion; bracketing and zoom with cubic interpolation).
/// `f` evaluates the objective and writes its gradient; a NaN objective is
/// treated as an invalid point and rejected by the line search.
inline QuasiNewtonResult lbfgs_maximize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const QuasiNewtonSettings& settings) {
  if (!(settings.sufficient_decrease > 0.0 &&
        settings.sufficient_decrease < settings.curvature && settings.curvature < 1.0)) {
    throw std::invalid_argument("lbfgs_maximize: need 0 < c1 < c2 < 1");
  }
  const Eigen::Index d = x0.size();
  // Internally minimize g = -f.
  const auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const double v = f(x, grad);
    grad = -grad;
    return -v;
  };

  QuasiNewtonResult result;
  result.x = x0;
  Eigen::VectorXd grad(d);
  double value = eval(result.x, grad);
  if (std::isnan(value)) {
    throw std::invalid_argument("lbfgs_maximize: objective invalid at start point");
  }

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    result.iterations = iter;
    if (grad.norm() <= settings.gradient_tolerance) {
      result.converged = true;
      break;
    }

    // Two-loop recursion: direction = -H grad with H the inverse-Hessian proxy.
    Eigen::VectorXd direction = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] =
          rho_hist[static_cast<std::size_t>(i)] *
          s_hist[static_cast<std::size_t>(i)].dot(direction);
      direction -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
    }
    if (!s_hist.empty()) {
      const auto& s = s_hist.back();
      const auto& y = y_hist.back();
      direction *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(direction);
      direction += (alpha[i] - beta) * s_hist[i];
    }
    direction = -direction;

    double dphi0 = grad.dot(direction);
    if (dphi0 >= 0.0) {  // not a descent direction; restart from steepest descent
      direction = -grad;
      dphi0 = grad.dot(direction);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // Strong Wolfe line search on phi(t) = g(x + t dir).
    const double phi0 = value;
    const double c1 = settings.sufficient_decrease;
    const double c2 = settings.curvature;
    Eigen::VectorXd trial_grad(d);
    Eigen::VectorXd x_new;
    double phi_new = 0.0;
    bool accepted = false;

    const auto phi = [&](double t, double& dphi) {
      x_new = result.x + t * direction;
      phi_new = eval(x_new, trial_grad);
      dphi = std::isnan(phi_new) ? std::numeric_limits<double>::quiet_NaN()
                                 : trial_grad.dot(direction);
      return phi_new;
    };

    const auto zoom = [&](double lo, double phi_lo, double dphi_lo, double hi,
                          double phi_hi, double dphi_hi) {
      for (int z = 0; z < 40; ++z) {
        const double t = detail::cubic_minimizer(lo, phi_lo, dphi_lo, hi, phi_hi, dphi_hi);
        double dphi_t;
        const double phi_t = phi(t, dphi_t);
        if (std::isnan(phi_t) || phi_t > phi0 + c1 * t * dphi0 || phi_t >= phi_lo) {
          hi = t;
          phi_hi = phi_t;
          dphi_hi = dphi_t;
          if (std::isnan(phi_t)) {  // shrink toward the valid end
            hi = lo + 0.5 * (t - lo);
            double dd;
            phi_hi = phi(hi, dd);
            dphi_hi = dd;
            if (std::isnan(phi_hi)) return false;
          }
        } else {
          if (std::abs(dphi_t) <= -c2 * dphi0) {
            accepted = true;
            return true;
          }
          if (dphi_t * (hi - lo) >= 0.0) {
            hi = lo;
            phi_hi = phi_lo;
            dphi_hi = dphi_lo;
          }
          lo = t;
          phi_lo = phi_t;
          dphi_lo = dphi_t;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
      }
      return accepted;
    };

    double t_prev = 0.0, phi_prev = phi0, dphi_prev = dphi0;
    double t = 1.0;
    const double t_max = 1e10;
    for (int ls = 0; ls < 30 && !accepted; ++ls) {
      double dphi_t;
      const double phi_t = phi(t, dphi_t);
      if (std::isnan(phi_t)) {  // invalid region: back off
        t = t_prev + 0.25 * (t - t_prev);
        continue;
      }
      if (phi_t > phi0 + c1 * t * dphi0 || (ls > 0 && phi_t >= phi_prev)) {
        zoom(t_prev, phi_prev, dphi_prev, t, phi_t, dphi_t);
        break;
      }
      if (std::abs(dphi_t) <= -c2 * dphi0) {
        accepted = true;
        break;
      }
      if (dphi_t >= 0.0) {
        zoom(t, phi_t, dphi_t, t_prev, phi_prev, dphi_prev);
        break;
      }
      t_prev = t;
      phi_prev = phi_t;
      dphi_prev = dphi_t;
      t = std::min(2.0 * t, t_max);
    }

    if (!accepted || !(phi_new < phi0)) {
      break;  // line-search failure: return best iterate, flagged via `converged`
    }

    const Eigen::VectorXd step = x_new - result.x;
    const Eigen::VectorXd grad_diff = trial_grad - grad;
    const double sy = step.dot(grad_diff);
    if (sy > 1e-14 * step.norm() * grad_diff.norm()) {
      s_hist.push_back(step);
      y_hist.push_back(grad_diff);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > settings.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    result.x = x_new;
    value = phi_new;
    grad = trial_grad;
  }

  if (!result.converged && grad.norm() <= settings.gradient_tolerance) {
    result.converged = true;
  }
  result.value = -value;
  result.gradient = -grad;
  return result;
}

}  // namespace rpcebo
