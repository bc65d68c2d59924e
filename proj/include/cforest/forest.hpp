#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cforest/data.hpp"

namespace cforest {

struct ForestParams {
  int num_trees = 2000;
  double sample_fraction = 0.5;
  /// Samples drawn per selected cluster (k). Unset: ceil(sample_fraction * median cluster size).
  std::optional<int> samples_per_cluster;
  /// Features tried per split. Unset: min(ceil(sqrt(p)) + 20, p).
  std::optional<int> mtry;
  int min_node_size = 5;
  double honesty_fraction = 0.5;
  /// Each child must keep at least this share of its parent's split-half samples.
  double alpha = 0.05;
  std::uint64_t seed = 42;
  /// 0 uses every available thread. Results do not depend on it.
  int num_threads = 0;

  void validate(Index num_features) const;
  int resolved_mtry(Index num_features) const;
  int resolved_samples_per_cluster(const ClusterIndex& idx) const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int depth = 1;
  std::vector<int> samples;  // leaves only: honest estimation samples

  bool is_leaf() const { return feature < 0; }
};

/// One honest tree. Samples with x[feature] <= threshold go left.
struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<int> drawn_clusters;  // sorted
  std::vector<int> split_sample;
  std::vector<int> estimation_sample;

  template <typename Vec>
  int leaf_of(const Vec& x) const {
    int k = 0;
    while (!nodes[k].is_leaf()) k = x(nodes[k].feature) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return k;
  }
};

struct Forest {
  std::vector<Tree> trees;
  ForestParams params;
  Index num_features = 0;
  Index num_clusters = 0;
  std::vector<int> sample_cluster;  // training sample -> dense cluster index

  Index num_samples() const { return static_cast<Index>(sample_cluster.size()); }
};

/// Sparse forest kernel: (sample index, weight) pairs sorted by index.
struct KernelWeights {
  std::vector<std::pair<int, double>> weights;
  int trees_used = 0;

  bool empty() const { return weights.empty(); }
  double sum() const;
};

/// Relabels the split-half samples of a node before split search. Returns
/// false when the node must become a leaf. `out` is aligned with `node`.
using SplitLabeler = std::function<bool(std::span<const int> node, std::span<double> out)>;

struct SubsampleDraw {
  std::vector<int> clusters;  // sorted
  std::vector<int> samples;   // sorted, no duplicates
};

/// Draws ceil(sample_fraction * J) clusters, then up to k samples from each.
/// Clusters with n_j <= k contribute every member.
SubsampleDraw draw_cluster_subsample(const ClusterIndex& idx, double sample_fraction, int samples_per_cluster,
                                     std::mt19937_64& rng);
SubsampleDraw draw_cluster_subsample(const ClusterIndex& idx, const ForestParams& params, std::mt19937_64& rng);

/// Grows one honest CART tree on `sample`. Split search sees only the split
/// half and `candidate_features`; leaves hold the estimation half.
Tree grow_tree(const Eigen::MatrixXd& x, const SplitLabeler& labeler, std::vector<int> sample,
               std::span<const int> candidate_features, const ForestParams& params, std::mt19937_64& rng);

/// Regression tree on `responses` over all features.
Tree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& responses, std::vector<int> sample,
               const ForestParams& params, std::mt19937_64& rng);

/// Per-tree generator derived from (seed, tree index) only.
std::mt19937_64 tree_rng(std::uint64_t seed, int tree);

/// Grows params.num_trees trees on cluster subsamples in parallel.
Forest fit_forest(const Eigen::MatrixXd& x, const ClusterIndex& clusters, const SplitLabeler& labeler,
                  std::span<const int> candidate_features, const ForestParams& params);

Forest fit_regression_forest(const Dataset& d, const Eigen::VectorXd& responses, const ForestParams& params);

/// Channel averages over trees with a nonempty leaf at the query point.
/// Each tree contributes the mean of every channel over its leaf's estimation
/// samples; trees are then weighted equally.
struct ForestAverage {
  Eigen::MatrixXd values;  // rows = query points, cols = channels
  std::vector<int> trees_used;
  long empty_leaf_skips = 0;

  bool missing(Index i) const { return trees_used[i] == 0; }
};

ForestAverage average_channels(const Forest& f, const Eigen::MatrixXd& query, const Eigen::MatrixXd& channels);
/// Out-of-bag version: query row i is a training sample and only trees whose
/// drawn clusters exclude its cluster contribute.
ForestAverage average_channels_oob(const Forest& f, const Eigen::MatrixXd& x, const Eigen::MatrixXd& channels);

/// Ensemble prediction at x. Throws NumericalError when every tree's leaf is empty.
double predict(const Forest& f, const Eigen::VectorXd& responses, const Eigen::Ref<const Eigen::VectorXd>& x);

struct OobPrediction {
  Eigen::VectorXd values;    // NaN where missing
  std::vector<bool> missing;
  long empty_leaf_skips = 0;

  long num_missing() const;
};

OobPrediction predict_oob(const Forest& f, const Dataset& d, const Eigen::VectorXd& responses);

/// Forest weights alpha_i(x) over estimation samples; empty when every leaf is empty.
KernelWeights kernel_weights(const Forest& f, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Depth-weighted split frequencies over depths 1..4 with weight depth^-2.
/// Uniform when the forest has no splits.
Eigen::VectorXd variable_importance(const Forest& f);

}  // namespace cforest
