#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cforest/data.hpp"
#include "cforest/error.hpp"
#include "cforest/forest.hpp"

namespace cforest {

/// Out-of-bag estimates of m(x) = E[Y | X = x] and e(x) = P[W = 1 | X = x].
struct NuisanceEstimates {
  Eigen::VectorXd y_hat;
  Eigen::VectorXd w_hat;
  std::string y_source;  // "forest" | "oracle"
  std::string w_source;  // "forest" | "oracle" | "trivial"
  long propensity_clipped = 0;
  long y_oob_filled = 0;  // samples without OOB trees, filled in-bag
  long w_oob_filled = 0;
  Eigen::VectorXd y_importance;  // empty unless forest-estimated
  Eigen::VectorXd w_importance;
};

struct NuisanceOptions {
  ForestParams params;
  std::optional<Eigen::VectorXd> y_hat;  // oracle override
  std::optional<Eigen::VectorXd> w_hat;  // oracle override
  /// Replace the propensity model by the constant mean(W).
  bool trivial_propensity = false;
};

inline constexpr double kPropensityClip = 1e-6;

NuisanceEstimates estimate_nuisances(const Dataset& d, const NuisanceOptions& options);

/// Constant-effect residual-on-residual estimator sum(ry * rw) / sum(rw^2).
template <typename DerivedY, typename DerivedW>
typename DerivedY::Scalar robinson_tau(const Eigen::MatrixBase<DerivedY>& residual_y,
                                       const Eigen::MatrixBase<DerivedW>& residual_w) {
  using Scalar = typename DerivedY::Scalar;
  if (residual_y.size() != residual_w.size() || residual_y.size() < 1)
    throw ParameterError("residual vectors must be nonempty and of equal length");
  const Scalar denom = residual_w.squaredNorm();
  if (denom < Scalar(1e-12)) throw NumericalError("degenerate treatment: sum of squared treatment residuals is zero");
  return residual_y.dot(residual_w) / denom;
}

/// Pseudo-outcomes rho_i = rw_i (ry_i - tau_P rw_i) / mean(rw^2) for a node,
/// with tau_P the node's residual-on-residual estimate. Nullopt for a
/// degenerate node (fewer than two samples or no treatment variation).
std::optional<Eigen::VectorXd> causal_split_responses(std::span<const int> node, const Eigen::VectorXd& residual_y,
                                                      const Eigen::VectorXd& residual_w);

struct CausalForestModel {
  Forest forest;
  NuisanceEstimates nuisances;
  std::vector<int> selected_features;
  ForestParams params;
  Eigen::VectorXd residual_y;
  Eigen::VectorXd residual_w;
};

struct CateEstimates {
  Eigen::VectorXd tau;  // NaN where missing
  std::vector<bool> missing;
  long empty_leaf_skips = 0;

  long num_missing() const;
};

/// Grows a causal forest on features `feature_subset` (all when empty) using
/// the dataset's clusters. Use Dataset::without_clusters() for i.i.d. sampling.
CausalForestModel fit_causal_forest(const Dataset& d, const NuisanceEstimates& nuis, const ForestParams& params,
                                    std::vector<int> feature_subset = {});

/// Weighted residual-on-residual estimate at x from the forest kernel.
double predict_cate_at(const CausalForestModel& m, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Out-of-bag CATE for every training sample of `d` (the data the model was fit on).
CateEstimates predict_cate_oob(const CausalForestModel& m, const Dataset& d);
/// CATE for arbitrary query rows using every tree.
CateEstimates predict_cate(const CausalForestModel& m, const Eigen::MatrixXd& query);

/// Mean of ((Y - y_hat) - tau (W - w_hat))^2 over non-missing samples.
double r_loss(const Dataset& d, const NuisanceEstimates& nuis, const CateEstimates& tau);

/// Default grid: min_node_size {5,10,20,50} x sample_fraction {0.3,0.5} x
/// mtry {ceil(q/3), ceil(sqrt(q)), q} over q candidate features. Other fields
/// are copied from `base`.
std::vector<ForestParams> default_tuning_grid(const ForestParams& base, Index num_features);

struct TuningResult {
  ForestParams best;
  std::size_t best_index = 0;
  std::vector<double> losses;  // one per grid entry, +inf when unevaluable
};

TuningResult tune_parameters(const Dataset& d, const NuisanceEstimates& nuis, const std::vector<ForestParams>& grid,
                             int pilot_trees, const std::vector<int>& feature_subset = {});

struct PipelineOptions {
  ForestParams nuisance_params;
  ForestParams causal_params;
  bool cluster = true;
  bool trivial_propensity = false;
  std::optional<Eigen::VectorXd> y_hat;
  std::optional<Eigen::VectorXd> w_hat;
  bool select_features = true;
  bool tune = true;
  int pilot_trees = 200;
  std::optional<int> final_samples_per_cluster = 50;
  /// Empty means default_tuning_grid(causal_params, #selected).
  std::vector<ForestParams> tuning_grid;
};

struct PipelineResult {
  NuisanceEstimates nuisances;
  Eigen::VectorXd pilot_importance;  // over all p features
  std::vector<int> selected_features;
  bool selection_fallback = false;
  std::optional<TuningResult> tuning;
  CausalForestModel model;
  CateEstimates cate;
  Eigen::VectorXd final_importance;  // over all p features
  std::vector<std::string> warnings;
};

/// Nuisance forests, pilot causal forest, selection of features with
/// above-mean importance, tuned final forest, out-of-bag CATEs.
PipelineResult run_pipeline(const Dataset& d, const PipelineOptions& options);

}  // namespace cforest
