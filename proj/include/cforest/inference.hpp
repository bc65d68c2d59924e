#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cforest/causal.hpp"
#include "cforest/data.hpp"
#include "cforest/stats.hpp"

namespace cforest {

/// AIPW score  Gamma_i = tau_i + (W_i - e_i) / (e_i (1 - e_i)) * (Y_i - m_i - (W_i - e_i) tau_i)
/// evaluated coefficient-wise. Throws NumericalError naming rows with e outside (0, 1).
template <typename D1, typename D2, typename D3, typename D4, typename D5>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, 1> doubly_robust_scores(
    const Eigen::MatrixBase<D1>& y, const Eigen::MatrixBase<D2>& w, const Eigen::MatrixBase<D3>& y_hat,
    const Eigen::MatrixBase<D4>& w_hat, const Eigen::MatrixBase<D5>& tau) {
  using Scalar = typename D1::Scalar;
  const Eigen::Index n = y.size();
  if (w.size() != n || y_hat.size() != n || w_hat.size() != n || tau.size() != n)
    throw ParameterError("doubly robust score inputs must have equal length");
  std::string bad;
  int num_bad = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(w_hat[i] > Scalar(0) && w_hat[i] < Scalar(1))) {
      if (num_bad++ < 10) bad += (bad.empty() ? "" : ", ") + std::to_string(i + 1);
    }
  }
  if (num_bad > 0)
    throw NumericalError("overlap error: propensity estimate outside (0, 1) at " + std::to_string(num_bad) +
                         " row(s): " + bad + (num_bad > 10 ? ", ..." : ""));
  const auto rw = (w - w_hat).array();
  return (tau.array() + rw / (w_hat.array() * (Scalar(1) - w_hat.array())) *
                            (y.array() - y_hat.array() - rw * tau.array()))
      .matrix();
}

/// Scores for a fitted model. Every sample must have an out-of-bag CATE.
Eigen::VectorXd doubly_robust_scores(const Dataset& d, const NuisanceEstimates& nuis, const CateEstimates& cate);

struct AteResult {
  double estimate = 0.0;
  double std_err = 0.0;
  long n_clusters = 0;

  double ci_lower() const { return estimate - 1.96 * std_err; }
  double ci_upper() const { return estimate + 1.96 * std_err; }
};

/// Equal-weight average of within-cluster score means, with the between-cluster
/// standard error sqrt(sum_j (tau_j - tau)^2 / (J (J - 1))). `subset`
/// restricts to masked samples; clusters left empty are dropped.
AteResult ate_cluster_robust(const Eigen::VectorXd& scores, const ClusterIndex& idx,
                             const std::vector<bool>* subset = nullptr);

/// Within-cluster means of the scores, in ClusterIndex order.
Eigen::VectorXd school_scores(const Eigen::VectorXd& scores, const ClusterIndex& idx);

struct SubgroupResult {
  AteResult high;
  AteResult low;
  double median_cate = 0.0;
  double difference = 0.0;
  double difference_se = 0.0;
};

/// ATE above vs at-or-below the median CATE. Throws when the CATEs are constant.
SubgroupResult subgroup_ate_by_median(const Eigen::VectorXd& scores, const ClusterIndex& idx, const Eigen::VectorXd& cate);

struct CalibrationResult {
  double mean_coef = 0.0, mean_se = 0.0, mean_t = 0.0, mean_p = 1.0;
  double diff_coef = 0.0, diff_se = 0.0, diff_t = 0.0, diff_p = 1.0;
  double df = 0.0;
  bool degenerate = false;  // constant predictions: differential term dropped
};

/// No-intercept regression of `response` on C = mean(pred) * scale and
/// D = (pred - mean(pred)) * scale, with cluster-weighted least squares and
/// cluster-robust (CR1) covariance on J - 1 degrees of freedom. Each cluster's
/// samples share total weight 1.
CalibrationResult calibration_regression(const Eigen::VectorXd& response, const Eigen::VectorXd& predictions,
                                         const Eigen::VectorXd& scale, const ClusterIndex& idx);

/// Best-linear-predictor test: regress Y - y_hat on tau_bar (W - w_hat) and
/// (tau - tau_bar)(W - w_hat).
CalibrationResult test_calibration(const Dataset& d, const NuisanceEstimates& nuis, const CateEstimates& cate,
                                   const ClusterIndex& idx);

struct SchoolForestResult {
  Eigen::VectorXd predictions;  // out-of-bag, one per school
  CalibrationResult calibration;
  std::vector<std::string> warnings;
};

/// Regression forest of per-school scores on school covariates (schools as
/// independent units), then a calibration test of its OOB predictions.
SchoolForestResult school_level_forest_analysis(const Eigen::MatrixXd& school_x, const Eigen::VectorXd& scores,
                                                const ForestParams& params);

/// Ratio of sample variances var(a) / var(b).
double variance_ratio(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct CrossfitResult {
  CalibrationResult calibration;
  Eigen::VectorXd predictions;  // out-of-fold CATE per sample
  std::vector<int> cluster_fold;
};

/// Cluster-aligned K-fold evaluation of non-clustered causal forests: each
/// fold's clusters are predicted by a forest fit on the remaining folds.
CrossfitResult crossfit_cluster_evaluation(const Dataset& d, const NuisanceEstimates& nuis, int folds,
                                           const ForestParams& params, const std::vector<int>& feature_subset = {});

}  // namespace cforest
