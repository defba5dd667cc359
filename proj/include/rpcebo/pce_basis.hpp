#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rpcebo {

/// Orders above this overflow no practically trained expansion and are
/// rejected to keep the recurrence in a well-tested range.
inline constexpr int kMaxHermiteOrder = 30;

/// Normalized probabilist Hermite polynomial psi_n(x) = He_n(x)/sqrt(n!),
/// evaluated through the normalized three-term recurrence
/// psi_{n+1}(x) = (x psi_n(x) - sqrt(n) psi_{n-1}(x)) / sqrt(n+1).
inline double hermite_eval(int order, double x) {
  if (order < 0 || order > kMaxHermiteOrder) {
    throw std::range_error("hermite_eval: order outside [0, 30]");
  }
  double prev = 0.0;
  double cur = 1.0;
  for (int n = 0; n < order; ++n) {
    const double next =
        (x * cur - std::sqrt(static_cast<double>(n)) * prev) /
        std::sqrt(static_cast<double>(n + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

/// psi_0(x) .. psi_max_order(x) in one sweep of the recurrence.
inline Eigen::VectorXd hermite_eval_all(int max_order, double x) {
  if (max_order < 0 || max_order > kMaxHermiteOrder) {
    throw std::range_error("hermite_eval_all: order outside [0, 30]");
  }
  Eigen::VectorXd values(max_order + 1);
  values(0) = 1.0;
  if (max_order == 0) return values;
  values(1) = x;
  for (int n = 1; n < max_order; ++n) {
    values(n + 1) = (x * values(n) - std::sqrt(static_cast<double>(n)) * values(n - 1)) /
                    std::sqrt(static_cast<double>(n + 1));
  }
  return values;
}

inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  }
  return result;
}

/// Multivariate total-degree index set, lexicographically sorted with the
/// all-zero tuple first. Pruned models hold arbitrary subsets, so the
/// indices list is explicit rather than implied by max_degree.
struct MultiIndexSet {
  int dimension = 0;
  int max_degree = 0;
  std::vector<std::vector<int>> indices;

  int size() const { return static_cast<int>(indices.size()); }

  MultiIndexSet subset(const std::vector<int>& keep) const {
    MultiIndexSet out;
    out.dimension = dimension;
    out.indices.reserve(keep.size());
    int deg = 0;
    for (int i : keep) {
      out.indices.push_back(indices.at(static_cast<std::size_t>(i)));
      int total = 0;
      for (int a : out.indices.back()) total += a;
      deg = std::max(deg, total);
    }
    out.max_degree = deg;
    return out;
  }

  /// Position of the all-zero index, or -1 when it has been pruned away.
  int constant_position() const {
    for (int i = 0; i < size(); ++i) {
      bool all_zero = true;
      for (int a : indices[static_cast<std::size_t>(i)]) all_zero &= (a == 0);
      if (all_zero) return i;
    }
    return -1;
  }
};

/// All multi-indices a in N^d with sum(a) <= m, sorted lexicographically.
inline MultiIndexSet total_degree_indices(int d, int m) {
  if (d < 1) throw std::invalid_argument("total_degree_indices: d must be >= 1");
  if (m < 0) throw std::invalid_argument("total_degree_indices: m must be >= 0");
  MultiIndexSet set;
  set.dimension = d;
  set.max_degree = m;
  std::vector<int> current(static_cast<std::size_t>(d), 0);
  // Depth-first enumeration in lexicographic order: position 0 varies slowest.
  const auto recurse = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == d) {
      set.indices.push_back(current);
      return;
    }
    for (int a = 0; a <= remaining; ++a) {
      current[static_cast<std::size_t>(pos)] = a;
      self(self, pos + 1, remaining - a);
    }
    current[static_cast<std::size_t>(pos)] = 0;
  };
  recurse(recurse, 0, m);
  std::sort(set.indices.begin(), set.indices.end());
  return set;
}

/// Single basis row: entry j = prod_i psi_{a_{j,i}}(u_i).
inline Eigen::RowVectorXd basis_row(const Eigen::Ref<const Eigen::VectorXd>& u,
                                    const MultiIndexSet& set) {
  if (u.size() != set.dimension) {
    throw std::invalid_argument("basis_row: point dimension mismatch");
  }
  const int d = set.dimension;
  // Univariate table psi_0..psi_max per coordinate, then products.
  Eigen::MatrixXd table(d, set.max_degree + 1);
  for (int i = 0; i < d; ++i) {
    table.row(i) = hermite_eval_all(set.max_degree, u(i)).transpose();
  }
  Eigen::RowVectorXd row(set.size());
  for (int j = 0; j < set.size(); ++j) {
    double prod = 1.0;
    const auto& a = set.indices[static_cast<std::size_t>(j)];
    for (int i = 0; i < d; ++i) prod *= table(i, a[static_cast<std::size_t>(i)]);
    row(j) = prod;
  }
  return row;
}

/// Design matrix with (k, j)-element Psi_j(u_k) for points stored row-wise.
inline Eigen::MatrixXd basis_matrix(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                    const MultiIndexSet& set) {
  if (points.rows() > 0 && points.cols() != set.dimension) {
    throw std::invalid_argument("basis_matrix: point dimension mismatch");
  }
  Eigen::MatrixXd out(points.rows(), set.size());
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    out.row(k) = basis_row(points.row(k).transpose(), set);
  }
  return out;
}

/// Independent marginal prior. Only the lognormal family is supported; the
/// kind enumeration keeps additional families an additive change.
struct MarginalPrior {
  enum class Kind { kLognormal };

  Kind kind = Kind::kLognormal;
  double mean = 1.0;   // physical-units mean
  double delta = 0.1;  // coefficient of variation

  static MarginalPrior lognormal(double mean, double delta) {
    if (!(mean > 0.0) || !(delta > 0.0)) {
      throw std::invalid_argument("MarginalPrior: mean and delta must be positive");
    }
    return MarginalPrior{Kind::kLognormal, mean, delta};
  }

  double sigma_ln() const { return std::sqrt(std::log1p(delta * delta)); }
  double mu_ln() const {
    const double s = sigma_ln();
    return std::log(mean) - 0.5 * s * s;
  }
};

/// Isoprobabilistic transform physical -> standard normal, elementwise.
inline Eigen::VectorXd to_standard_normal(const Eigen::Ref<const Eigen::VectorXd>& x,
                                          const std::vector<MarginalPrior>& priors) {
  if (x.size() != static_cast<Eigen::Index>(priors.size())) {
    throw std::invalid_argument("to_standard_normal: dimension mismatch");
  }
  Eigen::VectorXd u(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto& prior = priors[static_cast<std::size_t>(i)];
    if (!(x(i) > 0.0)) {
      throw std::domain_error("to_standard_normal: lognormal marginal requires x > 0");
    }
    u(i) = (std::log(x(i)) - prior.mu_ln()) / prior.sigma_ln();
  }
  return u;
}

inline Eigen::VectorXd from_standard_normal(const Eigen::Ref<const Eigen::VectorXd>& u,
                                            const std::vector<MarginalPrior>& priors) {
  if (u.size() != static_cast<Eigen::Index>(priors.size())) {
    throw std::invalid_argument("from_standard_normal: dimension mismatch");
  }
  Eigen::VectorXd x(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const auto& prior = priors[static_cast<std::size_t>(i)];
    x(i) = std::exp(prior.mu_ln() + prior.sigma_ln() * u(i));
  }
  return x;
}

}  // namespace rpcebo
