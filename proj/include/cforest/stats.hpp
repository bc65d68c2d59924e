#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "cforest/error.hpp"

namespace cforest {

/// Two-sided p-value of a t statistic. Infinite |t| gives 0, NaN gives 1.
template <typename Scalar>
Scalar t_two_sided_p(Scalar t, Scalar df) {
  if (std::isnan(t)) return Scalar(1);
  if (std::isinf(t)) return Scalar(0);
  boost::math::students_t_distribution<Scalar> dist(df);
  return std::clamp(Scalar(2) * boost::math::cdf(boost::math::complement(dist, std::abs(t))), Scalar(0), Scalar(1));
}

template <typename Scalar>
Scalar t_quantile(Scalar prob, Scalar df) {
  boost::math::students_t_distribution<Scalar> dist(df);
  return boost::math::quantile(dist, prob);
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" rule).
template <typename Derived>
typename Derived::Scalar quantile(const Eigen::MatrixBase<Derived>& values, double prob) {
  using Scalar = typename Derived::Scalar;
  if (values.size() == 0) throw ParameterError("quantile of an empty vector");
  const auto plain = values.eval();
  std::vector<Scalar> v(plain.data(), plain.data() + plain.size());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + static_cast<Scalar>(h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

template <typename Derived>
typename Derived::Scalar median(const Eigen::MatrixBase<Derived>& values) {
  return quantile(values.eval(), 0.5);
}

template <typename Derived>
typename Derived::Scalar sample_variance(const Eigen::MatrixBase<Derived>& values) {
  const auto n = values.size();
  if (n < 2) throw ParameterError("sample variance needs at least two values");
  const auto mean = values.mean();
  return (values.array() - mean).square().sum() / static_cast<typename Derived::Scalar>(n - 1);
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double ci_lower = 0.0;  // 95% interval for mean(a) - mean(b)
  double ci_upper = 0.0;
};

/// Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.
template <typename DerivedA, typename DerivedB>
TTestResult welch_t_test(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() < 2 || b.size() < 2) throw ParameterError("welch_t_test needs at least two values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  TTestResult r;
  r.mean_a = a.mean();
  r.mean_b = b.mean();
  const double va = sample_variance(a) / na;
  const double vb = sample_variance(b) / nb;
  const double se2 = va + vb;
  const double diff = r.mean_a - r.mean_b;
  if (se2 <= 0.0) {
    r.df = na + nb - 2.0;
    r.ci_lower = r.ci_upper = diff;
    if (diff == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  const double se = std::sqrt(se2);
  r.t = diff / se;
  r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p_value = t_two_sided_p(r.t, r.df);
  const double q = t_quantile(0.975, r.df);
  r.ci_lower = diff - q * se;
  r.ci_upper = diff + q * se;
  return r;
}

struct AnovaResult {
  double f = 0.0;
  double df_between = 0.0;
  double df_within = 0.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  double p_value = 1.0;
  int num_groups = 0;
};

/// One-way ANOVA of `values` grouped by `groups` (any integer labels).
template <typename Derived>
AnovaResult one_way_anova(const Eigen::MatrixBase<Derived>& values, std::span<const int> groups) {
  const auto n = values.size();
  if (static_cast<std::size_t>(n) != groups.size()) throw ParameterError("one group label per value required");
  std::map<int, std::pair<double, int>> sums;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& [s, c] = sums[groups[i]];
    s += values[i];
    ++c;
  }
  const int g = static_cast<int>(sums.size());
  if (g < 2) throw ParameterError("one_way_anova needs at least two groups");
  if (n <= g) throw ParameterError("one_way_anova needs more values than groups");

  const double grand = values.mean();
  AnovaResult r;
  r.num_groups = g;
  for (const auto& [label, sc] : sums) {
    const double m = sc.first / sc.second;
    r.ss_between += sc.second * (m - grand) * (m - grand);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& sc = sums[groups[i]];
    const double d = values[i] - sc.first / sc.second;
    r.ss_within += d * d;
  }
  r.df_between = g - 1.0;
  r.df_within = static_cast<double>(n - g);
  const double total = r.ss_between + r.ss_within;
  if (r.ss_within <= 1e-15 * total || total == 0.0) {
    if (r.ss_between <= 0.0 || total == 0.0) {
      r.f = 0.0;
      r.p_value = 1.0;
    } else {
      r.f = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  r.f = (r.ss_between / r.df_between) / (r.ss_within / r.df_within);
  boost::math::fisher_f_distribution<double> dist(r.df_between, r.df_within);
  r.p_value = std::clamp(boost::math::cdf(boost::math::complement(dist, r.f)), 0.0, 1.0);
  return r;
}

/// Group 0, 1, 2 for values in (-inf, q1], (q1, q2], (q2, inf) with q1, q2
/// the 1/3 and 2/3 sample quantiles.
template <typename Derived>
std::vector<int> tercile_groups(const Eigen::MatrixBase<Derived>& values) {
  const auto v = values.eval();
  const double q1 = quantile(v, 1.0 / 3.0), q2 = quantile(v, 2.0 / 3.0);
  std::vector<int> g(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) g[i] = v[i] <= q1 ? 0 : (v[i] <= q2 ? 1 : 2);
  return g;
}

struct Coefficient {
  std::string name;
  double estimate = 0.0;
  double std_err = 0.0;
  double t = 0.0;
  double p_value = 1.0;
};

struct RegressionResult {
  std::vector<Coefficient> coefficients;
  double df = 0.0;
  Eigen::MatrixXd covariance;
};

namespace detail {

inline void fill_inference(RegressionResult& r, const Eigen::VectorXd& beta) {
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    Coefficient& c = r.coefficients[k];
    c.estimate = beta[k];
    c.std_err = std::sqrt(std::max(0.0, r.covariance(k, k)));
    if (c.std_err > 0.0) {
      c.t = c.estimate / c.std_err;
    } else if (c.estimate == 0.0) {
      c.t = 0.0;
    } else {
      c.t = c.estimate > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
    c.p_value = t_two_sided_p(c.t, r.df);
  }
}

/// Throws naming the first column that is a linear combination of earlier ones.
inline void require_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == x.cols()) return;
  for (Eigen::Index k = 1; k <= x.cols(); ++k) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> partial(x.leftCols(k));
    if (partial.rank() < k)
      throw NumericalError("rank deficient design: column '" + names[k - 1] + "' is collinear with earlier columns");
  }
}

}  // namespace detail

/// Least squares of y on [1, X] with HC3 (leverage-adjusted) sandwich standard
/// errors and t tests on n - rank degrees of freedom.
template <typename DerivedY, typename DerivedX>
RegressionResult ols_hc(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedX>& x,
                        std::vector<std::string> names = {}) {
  const Eigen::Index n = y.size();
  if (x.rows() != n) throw ParameterError("design and response row counts differ");
  const Eigen::Index k = x.cols() + 1;
  Eigen::MatrixXd design(n, k);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x.template cast<double>();
  if (names.empty()) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != x.cols()) throw ParameterError("one name per design column required");
  names.insert(names.begin(), "(Intercept)");
  if (n <= k) throw NumericalError("ols_hc needs more observations than coefficients");
  detail::require_full_rank(design, names);

  const Eigen::VectorXd yd = y.template cast<double>();
  const Eigen::MatrixXd bread = (design.transpose() * design).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::VectorXd beta = bread * design.transpose() * yd;
  const Eigen::VectorXd resid = yd - design * beta;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = design.row(i) * bread * design.row(i).transpose();
    const double denom = 1.0 - h;
    if (denom <= 1e-12) continue;  // leverage 1 forces a zero residual
    const double w = resid[i] * resid[i] / (denom * denom);
    meat.noalias() += w * design.row(i).transpose() * design.row(i);
  }

  RegressionResult r;
  r.df = static_cast<double>(n - k);
  r.covariance = bread * meat * bread;
  r.coefficients.resize(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) r.coefficients[j].name = names[j];
  detail::fill_inference(r, beta);
  return r;
}

}  // namespace cforest
