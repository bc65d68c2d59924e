#include "cforest/causal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cforest {

namespace {

constexpr double kOverlapFloor = 1e-10;

// OOB forest predictions with missing entries filled in-bag.
Eigen::VectorXd oob_filled(const Forest& f, const Dataset& d, const Eigen::VectorXd& responses, long& filled) {
  OobPrediction oob = predict_oob(f, d, responses);
  filled = oob.num_missing();
  if (filled == 0) return oob.values;
  const ForestAverage all = average_channels(f, d.features(), responses);
  for (Index i = 0; i < d.n(); ++i) {
    if (!oob.missing[i]) continue;
    if (all.missing(i)) throw NumericalError("nuisance prediction undefined for sample " + std::to_string(i + 1));
    oob.values[i] = all.values(i, 0);
  }
  return oob.values;
}

std::vector<int> resolve_features(std::vector<int> subset, Index p) {
  if (subset.empty()) {
    subset.resize(static_cast<std::size_t>(p));
    std::iota(subset.begin(), subset.end(), 0);
  }
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  if (subset.front() < 0 || subset.back() >= p) throw ParameterError("feature subset index out of range");
  return subset;
}

CateEstimates cate_from_average(const ForestAverage& avg) {
  CateEstimates out;
  const Index n = avg.values.rows();
  out.tau.resize(n);
  out.missing.resize(static_cast<std::size_t>(n));
  out.empty_leaf_skips = avg.empty_leaf_skips;
  long weak = 0;
  Index first_weak = -1;
  for (Index i = 0; i < n; ++i) {
    out.missing[i] = avg.missing(i);
    if (out.missing[i]) {
      out.tau[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double denom = avg.values(i, 1);
    if (denom < kOverlapFloor) {
      if (weak++ == 0) first_weak = i;
      out.tau[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out.tau[i] = avg.values(i, 0) / denom;
  }
  if (weak > 0)
    throw NumericalError("insufficient overlap: weighted treatment residual variance below 1e-10 at " +
                         std::to_string(weak) + " point(s), first at row " + std::to_string(first_weak + 1));
  return out;
}

Eigen::MatrixXd cate_channels(const CausalForestModel& m) {
  Eigen::MatrixXd channels(m.residual_y.size(), 2);
  channels.col(0) = m.residual_y.cwiseProduct(m.residual_w);
  channels.col(1) = m.residual_w.cwiseAbs2();
  return channels;
}

}  // namespace

long CateEstimates::num_missing() const { return std::count(missing.begin(), missing.end(), true); }

NuisanceEstimates estimate_nuisances(const Dataset& d, const NuisanceOptions& options) {
  NuisanceEstimates out;
  const Index n = d.n();

  if (options.y_hat) {
    if (options.y_hat->size() != n || !options.y_hat->allFinite())
      throw ParameterError("supplied y_hat must be finite with one entry per sample");
    out.y_hat = *options.y_hat;
    out.y_source = "oracle";
  } else {
    ForestParams params = options.params;
    const Forest forest = fit_regression_forest(d, d.outcome(), params);
    out.y_hat = oob_filled(forest, d, d.outcome(), out.y_oob_filled);
    out.y_importance = variable_importance(forest);
    out.y_source = "forest";
  }

  if (options.w_hat) {
    if (options.w_hat->size() != n) throw ParameterError("supplied w_hat must have one entry per sample");
    if (!((options.w_hat->array() >= 0.0).all() && (options.w_hat->array() <= 1.0).all()))
      throw ParameterError("supplied w_hat must lie in [0, 1]");
    out.w_hat = *options.w_hat;
    out.w_source = "oracle";
  } else if (options.trivial_propensity) {
    out.w_hat = Eigen::VectorXd::Constant(n, d.treatment().mean());
    out.w_source = "trivial";
  } else {
    ForestParams params = options.params;
    params.seed = options.params.seed + 1;
    const Forest forest = fit_regression_forest(d, d.treatment(), params);
    out.w_hat = oob_filled(forest, d, d.treatment(), out.w_oob_filled);
    out.w_importance = variable_importance(forest);
    out.w_source = "forest";
    for (Index i = 0; i < n; ++i) {
      const double clipped = std::clamp(out.w_hat[i], kPropensityClip, 1.0 - kPropensityClip);
      if (clipped != out.w_hat[i]) {
        out.w_hat[i] = clipped;
        ++out.propensity_clipped;
      }
    }
  }
  return out;
}

std::optional<Eigen::VectorXd> causal_split_responses(std::span<const int> node, const Eigen::VectorXd& residual_y,
                                                      const Eigen::VectorXd& residual_w) {
  const std::size_t n = node.size();
  if (n < 2) return std::nullopt;
  double sum_yw = 0.0, sum_ww = 0.0;
  for (int i : node) {
    sum_yw += residual_y[i] * residual_w[i];
    sum_ww += residual_w[i] * residual_w[i];
  }
  if (sum_ww < 1e-12) return std::nullopt;
  const double tau = sum_yw / sum_ww;
  const double mean_ww = sum_ww / static_cast<double>(n);
  Eigen::VectorXd rho(static_cast<Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double a = residual_w[node[k]] * residual_y[node[k]];
    const double b = tau * residual_w[node[k]] * residual_w[node[k]];
    const double diff = a - b;
    // Exact cancellation up to rounding in tau counts as zero signal.
    rho[static_cast<Index>(k)] = std::abs(diff) <= 1e-12 * (std::abs(a) + std::abs(b)) ? 0.0 : diff / mean_ww;
  }
  return rho;
}

CausalForestModel fit_causal_forest(const Dataset& d, const NuisanceEstimates& nuis, const ForestParams& params,
                                    std::vector<int> feature_subset) {
  if (nuis.y_hat.size() != d.n() || nuis.w_hat.size() != d.n())
    throw ParameterError("nuisance estimates are not aligned with the data");
  if (d.num_clusters() < 2)
    throw NumericalError("clustering error: at least 2 clusters are needed, found " + std::to_string(d.num_clusters()));

  CausalForestModel m;
  m.nuisances = nuis;
  m.params = params;
  m.selected_features = resolve_features(std::move(feature_subset), d.p());
  m.residual_y = d.outcome() - nuis.y_hat;
  m.residual_w = d.treatment() - nuis.w_hat;

  const Eigen::VectorXd& ry = m.residual_y;
  const Eigen::VectorXd& rw = m.residual_w;
  SplitLabeler labeler = [&ry, &rw](std::span<const int> node, std::span<double> out) {
    auto rho = causal_split_responses(node, ry, rw);
    if (!rho) return false;
    std::copy(rho->begin(), rho->end(), out.begin());
    return true;
  };
  m.forest = fit_forest(d.features(), build_cluster_index(d), labeler, m.selected_features, params);
  return m;
}

double predict_cate_at(const CausalForestModel& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const KernelWeights kw = kernel_weights(m.forest, x);
  if (kw.empty()) throw NumericalError("prediction undefined: every tree has an empty leaf at x");
  double num = 0.0, den = 0.0;
  for (const auto& [i, a] : kw.weights) {
    num += a * m.residual_y[i] * m.residual_w[i];
    den += a * m.residual_w[i] * m.residual_w[i];
  }
  if (den < kOverlapFloor) throw NumericalError("insufficient overlap at x: weighted treatment residual variance below 1e-10");
  return num / den;
}

CateEstimates predict_cate_oob(const CausalForestModel& m, const Dataset& d) {
  if (d.n() != m.forest.num_samples()) throw ParameterError("dataset does not match the model's training data");
  return cate_from_average(average_channels_oob(m.forest, d.features(), cate_channels(m)));
}

CateEstimates predict_cate(const CausalForestModel& m, const Eigen::MatrixXd& query) {
  return cate_from_average(average_channels(m.forest, query, cate_channels(m)));
}

double r_loss(const Dataset& d, const NuisanceEstimates& nuis, const CateEstimates& tau) {
  if (tau.tau.size() != d.n() || nuis.y_hat.size() != d.n()) throw ParameterError("r_loss inputs are not aligned");
  double sum = 0.0;
  long used = 0;
  for (Index i = 0; i < d.n(); ++i) {
    if (tau.missing[i]) continue;
    const double r = (d.outcome()[i] - nuis.y_hat[i]) - tau.tau[i] * (d.treatment()[i] - nuis.w_hat[i]);
    sum += r * r;
    ++used;
  }
  if (used == 0) throw NumericalError("evaluation error: every sample lacks an out-of-bag estimate");
  return sum / static_cast<double>(used);
}

std::vector<ForestParams> default_tuning_grid(const ForestParams& base, Index num_features) {
  const auto q = static_cast<double>(num_features);
  std::vector<int> mtrys{static_cast<int>(std::ceil(q / 3.0)), static_cast<int>(std::ceil(std::sqrt(q))),
                         static_cast<int>(num_features)};
  std::vector<int> unique_mtry;
  for (int v : mtrys) {
    if (std::find(unique_mtry.begin(), unique_mtry.end(), v) == unique_mtry.end()) unique_mtry.push_back(v);
  }
  std::vector<ForestParams> grid;
  for (int min_node : {5, 10, 20, 50}) {
    for (double fraction : {0.3, 0.5}) {
      for (int mtry : unique_mtry) {
        ForestParams p = base;
        p.min_node_size = min_node;
        p.sample_fraction = fraction;
        p.mtry = mtry;
        grid.push_back(p);
      }
    }
  }
  return grid;
}

TuningResult tune_parameters(const Dataset& d, const NuisanceEstimates& nuis, const std::vector<ForestParams>& grid,
                             int pilot_trees, const std::vector<int>& feature_subset) {
  if (grid.empty()) throw ParameterError("tuning grid is empty");
  if (pilot_trees < 1) throw ParameterError("pilot tree count must be positive");
  TuningResult result;
  result.losses.assign(grid.size(), std::numeric_limits<double>::infinity());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    ForestParams pilot = grid[g];
    pilot.num_trees = pilot_trees;
    try {
      const CausalForestModel m = fit_causal_forest(d, nuis, pilot, feature_subset);
      result.losses[g] = r_loss(d, nuis, predict_cate_oob(m, d));
    } catch (const NumericalError&) {
      // Candidate cannot be evaluated; keep +inf.
    }
  }
  result.best_index = static_cast<std::size_t>(std::min_element(result.losses.begin(), result.losses.end()) -
                                               result.losses.begin());
  result.best = grid[result.best_index];
  return result;
}

PipelineResult run_pipeline(const Dataset& input, const PipelineOptions& options) {
  const Dataset d = options.cluster ? input : input.without_clusters();
  PipelineResult out;

  NuisanceOptions nuisance_options{options.nuisance_params, options.y_hat, options.w_hat, options.trivial_propensity};
  out.nuisances = estimate_nuisances(d, nuisance_options);
  if (out.nuisances.propensity_clipped > 0)
    out.warnings.push_back(std::to_string(out.nuisances.propensity_clipped) + " propensity estimates clipped to [1e-6, 1-1e-6]");
  if (out.nuisances.y_oob_filled + out.nuisances.w_oob_filled > 0)
    out.warnings.push_back("nuisance samples without out-of-bag trees filled in-bag: Y " +
                           std::to_string(out.nuisances.y_oob_filled) + ", W " +
                           std::to_string(out.nuisances.w_oob_filled));

  std::vector<int> all(static_cast<std::size_t>(d.p()));
  std::iota(all.begin(), all.end(), 0);
  out.selected_features = all;
  if (options.select_features) {
    const CausalForestModel pilot = fit_causal_forest(d, out.nuisances, options.causal_params, all);
    out.pilot_importance = variable_importance(pilot.forest);
    const double mean = out.pilot_importance.mean();
    out.selected_features.clear();
    for (Index j = 0; j < d.p(); ++j) {
      if (out.pilot_importance[j] > mean + 1e-12) out.selected_features.push_back(static_cast<int>(j));
    }
    if (out.selected_features.empty()) {
      out.selected_features = all;
      out.selection_fallback = true;
      out.warnings.push_back("no feature has above-mean importance; using all features");
    }
  }

  ForestParams final_params = options.causal_params;
  if (options.final_samples_per_cluster) final_params.samples_per_cluster = options.final_samples_per_cluster;
  if (options.tune) {
    const std::vector<ForestParams> grid =
        options.tuning_grid.empty()
            ? default_tuning_grid(final_params, static_cast<Index>(out.selected_features.size()))
            : options.tuning_grid;
    out.tuning = tune_parameters(d, out.nuisances, grid, options.pilot_trees, out.selected_features);
    final_params = out.tuning->best;
    final_params.num_trees = options.causal_params.num_trees;
    if (options.final_samples_per_cluster) final_params.samples_per_cluster = options.final_samples_per_cluster;
  }

  out.model = fit_causal_forest(d, out.nuisances, final_params, out.selected_features);
  out.cate = predict_cate_oob(out.model, d);
  out.final_importance = variable_importance(out.model.forest);
  if (out.cate.num_missing() > 0)
    out.warnings.push_back(std::to_string(out.cate.num_missing()) + " samples have no out-of-bag CATE estimate");
  return out;
}

}  // namespace cforest
