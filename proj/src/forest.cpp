#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cforest/error.hpp"
#include "cforest/forest.hpp"

namespace cforest {

namespace {

int thread_count(const ForestParams& params) {
#ifdef _OPENMP
  return params.num_threads > 0 ? params.num_threads : omp_get_max_threads();
#else
  (void)params;
  return 1;
#endif
}

// Mean of every channel over each leaf's estimation samples, laid out
// [node * K + channel]. Internal and empty nodes stay NaN.
std::vector<std::vector<double>> leaf_means(const Forest& f, const Eigen::MatrixXd& channels) {
  const Index k = channels.cols();
  std::vector<std::vector<double>> means(f.trees.size());
  for (std::size_t b = 0; b < f.trees.size(); ++b) {
    const Tree& tree = f.trees[b];
    auto& m = means[b];
    m.assign(tree.nodes.size() * static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t node = 0; node < tree.nodes.size(); ++node) {
      const auto& s = tree.nodes[node].samples;
      if (s.empty()) continue;
      for (Index c = 0; c < k; ++c) {
        double sum = 0.0;
        for (int i : s) sum += channels(i, c);
        m[node * k + c] = sum / static_cast<double>(s.size());
      }
    }
  }
  return means;
}

ForestAverage average_impl(const Forest& f, const Eigen::MatrixXd& query, const Eigen::MatrixXd& channels,
                           bool oob) {
  if (query.cols() != f.num_features) throw ParameterError("query points must have one entry per forest feature");
  if (channels.rows() != f.num_samples()) throw ParameterError("channel rows must match the training sample count");
  if (oob && query.rows() != f.num_samples()) throw ParameterError("out-of-bag queries must be the training samples");

  const Index k = channels.cols();
  const auto means = leaf_means(f, channels);
  std::vector<std::vector<char>> drawn;
  if (oob) {
    drawn.assign(f.trees.size(), std::vector<char>(static_cast<std::size_t>(f.num_clusters), 0));
    for (std::size_t b = 0; b < f.trees.size(); ++b) {
      for (int j : f.trees[b].drawn_clusters) drawn[b][j] = 1;
    }
  }

  ForestAverage out;
  out.values = Eigen::MatrixXd::Zero(query.rows(), k);
  out.trees_used.assign(static_cast<std::size_t>(query.rows()), 0);
  long skips = 0;
  const Index rows = query.rows();

#pragma omp parallel for schedule(static) reduction(+ : skips) num_threads(thread_count(f.params))
  for (Index i = 0; i < rows; ++i) {
    const Eigen::VectorXd xi = query.row(i).transpose();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(k);
    int used = 0;
    for (std::size_t b = 0; b < f.trees.size(); ++b) {
      if (oob && drawn[b][f.sample_cluster[i]]) continue;
      const int leaf = f.trees[b].leaf_of(xi);
      if (f.trees[b].nodes[leaf].samples.empty()) {
        ++skips;
        continue;
      }
      for (Index c = 0; c < k; ++c) acc[c] += means[b][leaf * k + c];
      ++used;
    }
    if (used > 0) {
      out.values.row(i) = (acc / used).transpose();
    } else {
      out.values.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    out.trees_used[i] = used;
  }
  out.empty_leaf_skips = skips;
  return out;
}

}  // namespace

void ForestParams::validate(Index num_features) const {
  if (num_trees < 1) throw ParameterError("num_trees must be at least 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) throw ParameterError("sample_fraction must lie in (0, 1]");
  if (samples_per_cluster && *samples_per_cluster < 1) throw ParameterError("samples_per_cluster must be at least 1");
  if (mtry && (*mtry < 1 || *mtry > num_features))
    throw ParameterError("mtry must lie in [1, " + std::to_string(num_features) + "]");
  if (min_node_size < 1) throw ParameterError("min_node_size must be at least 1");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0)) throw ParameterError("honesty_fraction must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ParameterError("alpha must lie in (0, 0.5)");
  if (num_threads < 0) throw ParameterError("num_threads must be >= 0");
}

int ForestParams::resolved_mtry(Index num_features) const {
  const auto p = static_cast<int>(num_features);
  if (mtry) return std::min(*mtry, p);
  return std::min(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p)))) + 20, p);
}

int ForestParams::resolved_samples_per_cluster(const ClusterIndex& idx) const {
  if (samples_per_cluster) return *samples_per_cluster;
  std::vector<int> sizes = idx.sizes();
  std::sort(sizes.begin(), sizes.end());
  const std::size_t m = sizes.size();
  const double median = m % 2 == 1 ? sizes[m / 2] : 0.5 * (sizes[m / 2 - 1] + sizes[m / 2]);
  return std::max(1, static_cast<int>(std::ceil(sample_fraction * median - 1e-9)));
}

double KernelWeights::sum() const {
  double s = 0.0;
  for (const auto& [i, w] : weights) s += w;
  return s;
}

long OobPrediction::num_missing() const { return std::count(missing.begin(), missing.end(), true); }

std::mt19937_64 tree_rng(std::uint64_t seed, int tree) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tree), 0x5eedu};
  return std::mt19937_64(seq);
}

Forest fit_forest(const Eigen::MatrixXd& x, const ClusterIndex& clusters, const SplitLabeler& labeler,
                  std::span<const int> candidate_features, const ForestParams& params) {
  if (candidate_features.empty()) throw ParameterError("forest needs at least one candidate feature");
  params.validate(static_cast<Index>(candidate_features.size()));
  for (int f : candidate_features) {
    if (f < 0 || f >= x.cols()) throw ParameterError("candidate feature out of range");
  }
  if (clusters.num_samples() != x.rows()) throw ParameterError("cluster index does not match the data");

  Forest forest;
  forest.params = params;
  forest.num_features = x.cols();
  forest.num_clusters = clusters.num_clusters();
  forest.sample_cluster = clusters.cluster_of;
  forest.trees.resize(static_cast<std::size_t>(params.num_trees));
  const int k = params.resolved_samples_per_cluster(clusters);

#pragma omp parallel for schedule(dynamic) num_threads(thread_count(params))
  for (int b = 0; b < params.num_trees; ++b) {
    auto rng = tree_rng(params.seed, b);
    SubsampleDraw draw = draw_cluster_subsample(clusters, params.sample_fraction, k, rng);
    Tree tree = grow_tree(x, labeler, std::move(draw.samples), candidate_features, params, rng);
    tree.drawn_clusters = std::move(draw.clusters);
    forest.trees[b] = std::move(tree);
  }
  return forest;
}

Forest fit_regression_forest(const Dataset& d, const Eigen::VectorXd& responses, const ForestParams& params) {
  if (responses.size() != d.n()) throw ParameterError("responses must have one entry per sample");
  if (!responses.allFinite()) throw ValidationError("non-finite response");
  std::vector<int> features(static_cast<std::size_t>(d.p()));
  std::iota(features.begin(), features.end(), 0);
  SplitLabeler labeler = [&responses](std::span<const int> node, std::span<double> out) {
    for (std::size_t k = 0; k < node.size(); ++k) out[k] = responses[node[k]];
    return true;
  };
  return fit_forest(d.features(), build_cluster_index(d), labeler, features, params);
}

ForestAverage average_channels(const Forest& f, const Eigen::MatrixXd& query, const Eigen::MatrixXd& channels) {
  return average_impl(f, query, channels, false);
}

ForestAverage average_channels_oob(const Forest& f, const Eigen::MatrixXd& x, const Eigen::MatrixXd& channels) {
  return average_impl(f, x, channels, true);
}

double predict(const Forest& f, const Eigen::VectorXd& responses, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != f.num_features) throw ParameterError("x must have one entry per forest feature");
  const ForestAverage avg = average_channels(f, x.transpose(), responses);
  if (avg.missing(0)) throw NumericalError("prediction undefined: every tree has an empty leaf at x");
  return avg.values(0, 0);
}

OobPrediction predict_oob(const Forest& f, const Dataset& d, const Eigen::VectorXd& responses) {
  const ForestAverage avg = average_channels_oob(f, d.features(), responses);
  OobPrediction out;
  out.values = avg.values.col(0);
  out.missing.resize(static_cast<std::size_t>(d.n()));
  for (Index i = 0; i < d.n(); ++i) out.missing[i] = avg.missing(i);
  out.empty_leaf_skips = avg.empty_leaf_skips;
  return out;
}

KernelWeights kernel_weights(const Forest& f, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != f.num_features) throw ParameterError("x must have one entry per forest feature");
  std::vector<double> dense(static_cast<std::size_t>(f.num_samples()), 0.0);
  KernelWeights out;
  for (const Tree& tree : f.trees) {
    const auto& leaf = tree.nodes[tree.leaf_of(x)].samples;
    if (leaf.empty()) continue;
    const double w = 1.0 / static_cast<double>(leaf.size());
    for (int i : leaf) dense[i] += w;
    ++out.trees_used;
  }
  if (out.trees_used == 0) return out;
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] > 0.0) out.weights.emplace_back(static_cast<int>(i), dense[i] / out.trees_used);
  }
  return out;
}

Eigen::VectorXd variable_importance(const Forest& f) {
  constexpr int max_depth = 4;
  constexpr double decay = 2.0;
  const Index p = f.num_features;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(max_depth, p);
  for (const Tree& tree : f.trees) {
    for (const TreeNode& node : tree.nodes) {
      if (!node.is_leaf() && node.depth <= max_depth) counts(node.depth - 1, node.feature) += 1.0;
    }
  }
  if (counts.sum() == 0.0) return Eigen::VectorXd::Constant(p, 1.0 / static_cast<double>(p));

  Eigen::VectorXd weight(max_depth);
  for (int d = 0; d < max_depth; ++d) weight[d] = std::pow(d + 1.0, -decay);
  weight /= weight.sum();
  for (int d = 0; d < max_depth; ++d) {
    const double total = counts.row(d).sum();
    if (total > 0.0) counts.row(d) /= total;
  }
  Eigen::VectorXd importance = counts.transpose() * weight;
  return importance / importance.sum();
}

}  // namespace cforest
