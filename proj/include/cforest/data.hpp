#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cforest {

using Index = Eigen::Index;

/// Immutable study data: covariates X (n x p), outcome Y, binary treatment W
/// and a cluster label per sample. Cluster labels are mapped to dense indices
/// 0..J-1 in order of first appearance.
class Dataset {
 public:
  /// Empty `cluster_labels` puts every sample in its own cluster.
  Dataset(Eigen::MatrixXd features, Eigen::VectorXd outcome, Eigen::VectorXd treatment,
          std::vector<std::string> cluster_labels = {}, std::vector<std::string> feature_names = {},
          std::vector<std::string> feature_sources = {});

  Index n() const { return outcome_.size(); }
  Index p() const { return features_.cols(); }
  Index num_clusters() const { return static_cast<Index>(cluster_labels_.size()); }

  const Eigen::MatrixXd& features() const { return features_; }
  const Eigen::VectorXd& outcome() const { return outcome_; }
  const Eigen::VectorXd& treatment() const { return treatment_; }
  /// Dense cluster index of every sample.
  const std::vector<int>& cluster() const { return cluster_; }
  /// Original label of each dense cluster index.
  const std::vector<std::string>& cluster_labels() const { return cluster_labels_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  /// Name of the input column each feature came from (differs from the
  /// feature name only for one-hot indicator columns).
  const std::vector<std::string>& feature_sources() const { return feature_sources_; }

  /// Index of the named feature, or nullopt.
  std::optional<Index> feature_index(const std::string& name) const;

  /// Same data with every sample in its own cluster.
  Dataset without_clusters() const;
  /// Row subset, preserving order; clusters are re-indexed by first appearance.
  Dataset rows(std::span<const int> idx) const;
  /// Same covariates and clusters with a different outcome.
  Dataset with_outcome(Eigen::VectorXd outcome) const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXd outcome_;
  Eigen::VectorXd treatment_;
  std::vector<int> cluster_;
  std::vector<std::string> cluster_labels_;
  std::vector<std::string> feature_names_;
  std::vector<std::string> feature_sources_;
};

/// Partition of samples by cluster.
struct ClusterIndex {
  std::vector<std::vector<int>> members;
  std::vector<int> cluster_of;  // sample -> cluster

  Index num_clusters() const { return static_cast<Index>(members.size()); }
  Index num_samples() const { return static_cast<Index>(cluster_of.size()); }
  int size(Index j) const { return static_cast<int>(members[j].size()); }
  std::vector<int> sizes() const;
};

ClusterIndex build_cluster_index(const Dataset& d);
/// From dense labels in 0..J-1; every label in range must be used.
ClusterIndex build_cluster_index(std::span<const int> cluster_of);

struct SchemaConfig {
  std::string outcome_column = "Y";
  std::string treatment_column = "W";
  std::optional<std::string> cluster_column;
  std::vector<std::string> categorical_columns;
};

/// Reads a comma-separated file with a header row. Categorical columns are
/// expanded to one 0/1 indicator per observed level, named `<col>.<level>`.
/// Every other non-role column must be numeric. Missing values are rejected.
Dataset load_csv(const std::string& path, const SchemaConfig& schema);

/// Writes features, outcome (Y), treatment (W) and cluster label columns.
void write_csv(const Dataset& d, const std::string& path);

/// Ground truth emitted by the synthetic generators.
struct Oracle {
  Eigen::VectorXd true_propensity;
  Eigen::VectorXd true_cate;
  Eigen::VectorXd cluster_effect;  // gamma of the sample's cluster; 0 when absent
};

void write_oracle_csv(const Oracle& oracle, const std::string& path);

struct SimulatedData {
  Dataset data;
  Oracle oracle;
};

/// X ~ N(0, I_p), W ~ Bernoulli(logistic(X_1)), Y = 2 mean(X_1..X_6) + N(0,1).
/// No treatment effect; each sample is its own cluster. Requires p >= 6.
SimulatedData simulate_confounded(Index n, Index p, std::uint64_t seed);

/// Generator parameters for clustered school-style data.
///
/// Student covariates S1..Sq are i.i.d. N(0,1) per sample; school covariates
/// X1..Xr are N(0,1) per cluster and constant within it. Features are laid out
/// as [S1..Sq, X1..Xr]. With beta_j ~ N(0, beta_sd^2), gamma_j ~ N(0, gamma_sd^2):
///
///   Y = m(X) + W (tau(X) + gamma_j) + beta_j + N(0, noise_sd^2)
///   m(x) = main_coefficients . x
///   tau(x) = tau_base + tau_step * 1{x[tau_feature] > tau_threshold}
///   e(x) = logistic(logit(propensity) + propensity_slope * x[propensity_feature])
struct SchoolEffectSpec {
  int num_student_covariates = 4;
  int num_school_covariates = 4;
  /// Empty means 0.5 on S1 and 0.5 on X1.
  std::vector<double> main_coefficients;
  double tau_base = 0.25;
  double tau_step = 0.0;
  int tau_feature = 0;
  double tau_threshold = 0.0;
  double beta_sd = 0.3;
  double gamma_sd = 0.1;
  double noise_sd = 1.0;
  double propensity = 0.5;
  double propensity_slope = 0.0;
  int propensity_feature = 0;
  /// Cluster sizes are uniform on mean_size * [1 - spread, 1 + spread].
  double size_spread = 0.5;

  void validate() const;
};

SimulatedData simulate_school_data(Index num_clusters, Index mean_cluster_size, const SchoolEffectSpec& spec,
                                   std::uint64_t seed);

/// Assigns every cluster to one of `folds` folds; fold sizes differ by at most one.
std::vector<int> split_clusters_kfold(const ClusterIndex& idx, int folds, std::uint64_t seed);

}  // namespace cforest
