#include "cforest/inference.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace cforest {

Eigen::VectorXd doubly_robust_scores(const Dataset& d, const NuisanceEstimates& nuis, const CateEstimates& cate) {
  if (cate.tau.size() != d.n()) throw ParameterError("CATE estimates are not aligned with the data");
  const long missing = cate.num_missing();
  if (missing > 0)
    throw NumericalError("doubly robust scores need an out-of-bag CATE for every sample; " + std::to_string(missing) +
                         " missing");
  return doubly_robust_scores(d.outcome(), d.treatment(), nuis.y_hat, nuis.w_hat, cate.tau);
}

AteResult ate_cluster_robust(const Eigen::VectorXd& scores, const ClusterIndex& idx, const std::vector<bool>* subset) {
  if (scores.size() != idx.num_samples()) throw ParameterError("scores are not aligned with the cluster index");
  if (subset && static_cast<Index>(subset->size()) != scores.size()) throw ParameterError("subset mask has wrong length");
  if (!scores.allFinite()) throw NumericalError("inference error: non-finite doubly robust score");

  std::vector<double> means;
  for (const auto& members : idx.members) {
    double sum = 0.0;
    int count = 0;
    for (int i : members) {
      if (subset && !(*subset)[i]) continue;
      sum += scores[i];
      ++count;
    }
    if (count > 0) means.push_back(sum / count);
  }
  const auto j = static_cast<long>(means.size());
  if (j < 2) throw NumericalError("inference error: need at least 2 nonempty clusters, found " + std::to_string(j));

  AteResult r;
  r.n_clusters = j;
  const Eigen::Map<const Eigen::VectorXd> tau_j(means.data(), j);
  r.estimate = tau_j.mean();
  r.std_err = std::sqrt((tau_j.array() - r.estimate).square().sum() / (static_cast<double>(j) * (j - 1)));
  return r;
}

Eigen::VectorXd school_scores(const Eigen::VectorXd& scores, const ClusterIndex& idx) {
  if (scores.size() != idx.num_samples()) throw ParameterError("scores are not aligned with the cluster index");
  Eigen::VectorXd out(idx.num_clusters());
  for (Index j = 0; j < idx.num_clusters(); ++j) {
    double sum = 0.0;
    for (int i : idx.members[j]) sum += scores[i];
    out[j] = sum / idx.size(j);
  }
  return out;
}

SubgroupResult subgroup_ate_by_median(const Eigen::VectorXd& scores, const ClusterIndex& idx,
                                      const Eigen::VectorXd& cate) {
  if (cate.size() != scores.size()) throw ParameterError("CATE and scores have different lengths");
  if (!cate.allFinite()) throw NumericalError("subgroup split needs finite CATE estimates");
  if (cate.maxCoeff() == cate.minCoeff()) throw NumericalError("degenerate split: CATE estimates are constant");

  SubgroupResult r;
  r.median_cate = median(cate);
  std::vector<bool> high(static_cast<std::size_t>(cate.size())), low(high.size());
  for (Index i = 0; i < cate.size(); ++i) {
    high[i] = cate[i] > r.median_cate;
    low[i] = !high[i];
  }
  r.high = ate_cluster_robust(scores, idx, &high);
  r.low = ate_cluster_robust(scores, idx, &low);
  r.difference = r.high.estimate - r.low.estimate;
  r.difference_se = std::hypot(r.high.std_err, r.low.std_err);
  return r;
}

CalibrationResult calibration_regression(const Eigen::VectorXd& response, const Eigen::VectorXd& predictions,
                                         const Eigen::VectorXd& scale, const ClusterIndex& idx) {
  const Index n = response.size();
  if (predictions.size() != n || scale.size() != n || idx.num_samples() != n)
    throw ParameterError("calibration inputs are not aligned");
  if (!predictions.allFinite()) throw NumericalError("calibration needs finite predictions");
  const Index num_clusters = idx.num_clusters();
  if (num_clusters < 2) throw NumericalError("inference error: calibration needs at least 2 clusters");

  CalibrationResult r;
  const double mean_pred = predictions.mean();
  const double spread = predictions.maxCoeff() - predictions.minCoeff();
  r.degenerate = spread <= 1e-12 * std::max(1.0, std::abs(mean_pred));
  const Index k = r.degenerate ? 1 : 2;

  Eigen::MatrixXd x(n, k);
  x.col(0) = mean_pred * scale;
  if (!r.degenerate) x.col(1) = (predictions.array() - mean_pred).matrix().cwiseProduct(scale);
  Eigen::VectorXd weight(n);
  for (Index i = 0; i < n; ++i) weight[i] = 1.0 / idx.size(idx.cluster_of[i]);

  const Eigen::MatrixXd a = x.transpose() * weight.asDiagonal() * x;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (lu.rank() < k) throw NumericalError("inference error: calibration design is singular");
  const Eigen::MatrixXd a_inv = lu.inverse();
  const Eigen::VectorXd beta = a_inv * (x.transpose() * weight.cwiseProduct(response));
  const Eigen::VectorXd resid = response - x * beta;

  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (const auto& members : idx.members) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
    for (int i : members) s += weight[i] * resid[i] * x.row(i).transpose();
    meat.noalias() += s * s.transpose();
  }
  const double j = static_cast<double>(num_clusters);

  RegressionResult fit;
  fit.df = j - 1.0;
  fit.covariance = j / (j - 1.0) * a_inv * meat * a_inv;
  fit.coefficients.resize(static_cast<std::size_t>(k));
  detail::fill_inference(fit, beta);

  r.df = fit.df;
  r.mean_coef = fit.coefficients[0].estimate;
  r.mean_se = fit.coefficients[0].std_err;
  r.mean_t = fit.coefficients[0].t;
  r.mean_p = fit.coefficients[0].p_value;
  if (r.degenerate) {
    r.diff_coef = r.diff_se = r.diff_t = r.diff_p = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.diff_coef = fit.coefficients[1].estimate;
    r.diff_se = fit.coefficients[1].std_err;
    r.diff_t = fit.coefficients[1].t;
    r.diff_p = fit.coefficients[1].p_value;
  }
  return r;
}

CalibrationResult test_calibration(const Dataset& d, const NuisanceEstimates& nuis, const CateEstimates& cate,
                                   const ClusterIndex& idx) {
  if (cate.num_missing() > 0) throw NumericalError("calibration needs an out-of-bag CATE for every sample");
  return calibration_regression(d.outcome() - nuis.y_hat, cate.tau, d.treatment() - nuis.w_hat, idx);
}

SchoolForestResult school_level_forest_analysis(const Eigen::MatrixXd& school_x, const Eigen::VectorXd& scores,
                                                const ForestParams& params) {
  const Index j = scores.size();
  if (school_x.rows() != j) throw ParameterError("one covariate row per school required");
  SchoolForestResult out;
  if (j < 10) out.warnings.push_back("only " + std::to_string(j) + " schools; school-level forest will be unstable");

  const Dataset schools(school_x, scores, Eigen::VectorXd::Zero(j));
  const Forest forest = fit_regression_forest(schools, scores, params);
  OobPrediction oob = predict_oob(forest, schools, scores);
  if (oob.num_missing() > 0) {
    const ForestAverage all = average_channels(forest, school_x, scores);
    for (Index i = 0; i < j; ++i) {
      if (oob.missing[i]) oob.values[i] = all.values(i, 0);
    }
    out.warnings.push_back(std::to_string(oob.num_missing()) + " schools without out-of-bag trees predicted in-bag");
  }
  out.predictions = oob.values;
  out.calibration =
      calibration_regression(scores, out.predictions, Eigen::VectorXd::Ones(j), build_cluster_index(schools));
  return out;
}

double variance_ratio(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double vb = sample_variance(b);
  if (!(vb > 0.0)) throw NumericalError("ratio undefined: denominator has zero variance");
  return sample_variance(a) / vb;
}

CrossfitResult crossfit_cluster_evaluation(const Dataset& d, const NuisanceEstimates& nuis, int folds,
                                           const ForestParams& params, const std::vector<int>& feature_subset) {
  if (folds < 2) throw ParameterError("crossfit evaluation needs at least 2 folds");
  const ClusterIndex idx = build_cluster_index(d);
  CrossfitResult out;
  out.cluster_fold = split_clusters_kfold(idx, folds, params.seed);
  out.predictions = Eigen::VectorXd::Constant(d.n(), std::numeric_limits<double>::quiet_NaN());

  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, test;
    for (Index i = 0; i < d.n(); ++i) (out.cluster_fold[d.cluster()[i]] == f ? test : train).push_back(static_cast<int>(i));
    if (test.empty() || train.empty()) throw NumericalError("partition error: fold " + std::to_string(f) + " is empty");

    const Dataset train_data = d.rows(train).without_clusters();
    NuisanceEstimates train_nuis;
    train_nuis.y_hat.resize(static_cast<Index>(train.size()));
    train_nuis.w_hat.resize(static_cast<Index>(train.size()));
    for (std::size_t r = 0; r < train.size(); ++r) {
      train_nuis.y_hat[static_cast<Index>(r)] = nuis.y_hat[train[r]];
      train_nuis.w_hat[static_cast<Index>(r)] = nuis.w_hat[train[r]];
    }
    ForestParams fold_params = params;
    fold_params.seed = params.seed + static_cast<std::uint64_t>(f) + 1;
    const CausalForestModel model = fit_causal_forest(train_data, train_nuis, fold_params, feature_subset);

    Eigen::MatrixXd query(static_cast<Index>(test.size()), d.p());
    for (std::size_t r = 0; r < test.size(); ++r) query.row(static_cast<Index>(r)) = d.features().row(test[r]);
    const CateEstimates cate = predict_cate(model, query);
    if (cate.num_missing() > 0) throw NumericalError("crossfit prediction undefined for some held-out samples");
    for (std::size_t r = 0; r < test.size(); ++r) out.predictions[test[r]] = cate.tau[static_cast<Index>(r)];
  }

  out.calibration = calibration_regression(d.outcome() - nuis.y_hat, out.predictions, d.treatment() - nuis.w_hat, idx);
  return out;
}

}  // namespace cforest
