#include <algorithm>
#include <cmath>
#include <numeric>

#include "cforest/error.hpp"
#include "cforest/forest.hpp"

namespace cforest {

namespace {

// Fisher-Yates prefix: the first `take` entries of v become a uniform sample.
template <typename T>
void partial_shuffle(std::vector<T>& v, std::size_t take, std::mt19937_64& rng) {
  take = std::min(take, v.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
    std::swap(v[i], v[pick(rng)]);
  }
}

std::size_t ceil_share(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

class SplitFinder {
 public:
  SplitFinder(const Eigen::MatrixXd& x, std::span<const int> candidates, const ForestParams& params)
      : x_(x), candidates_(candidates.begin(), candidates.end()), params_(params),
        mtry_(std::min<int>(params.resolved_mtry(static_cast<Index>(candidates.size())),
                            static_cast<int>(candidates.size()))) {}

  Split best(std::span<const int> node, std::span<const double> labels, std::mt19937_64& rng) {
    const std::size_t n = node.size();
    const std::size_t min_child =
        std::max<std::size_t>({static_cast<std::size_t>(params_.min_node_size), ceil_share(params_.alpha, n), 1});
    double total = 0.0, scale = 0.0;
    for (double v : labels) {
      total += v;
      scale += v * v;
    }
    Split best;
    if (scale <= 0.0 || n < 2 * min_child) return best;
    const double floor_gain = 1e-12 * scale;
    const double parent = total * total / static_cast<double>(n);

    partial_shuffle(candidates_, static_cast<std::size_t>(mtry_), rng);
    pairs_.resize(n);
    for (int t = 0; t < mtry_; ++t) {
      const int f = candidates_[t];
      for (std::size_t k = 0; k < n; ++k) pairs_[k] = {x_(node[k], f), labels[k]};
      std::sort(pairs_.begin(), pairs_.end());
      double left = 0.0;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        left += pairs_[k].second;
        const std::size_t nl = k + 1, nr = n - nl;
        if (nl < min_child) continue;
        if (nr < min_child) break;
        if (pairs_[k].first == pairs_[k + 1].first) continue;
        const double right = total - left;
        const double gain = left * left / nl + right * right / nr - parent;
        if (gain <= floor_gain) continue;
        double thr = 0.5 * (pairs_[k].first + pairs_[k + 1].first);
        if (!(thr < pairs_[k + 1].first)) thr = pairs_[k].first;
        if (gain > best.gain || (gain == best.gain && (f < best.feature || (f == best.feature && thr < best.threshold)))) {
          best = {f, thr, gain};
        }
      }
    }
    return best;
  }

 private:
  const Eigen::MatrixXd& x_;
  std::vector<int> candidates_;
  const ForestParams& params_;
  int mtry_;
  std::vector<std::pair<double, double>> pairs_;
};

}  // namespace

SubsampleDraw draw_cluster_subsample(const ClusterIndex& idx, double sample_fraction, int samples_per_cluster,
                                     std::mt19937_64& rng) {
  const std::size_t num = idx.members.size();
  std::vector<int> order(num);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::clamp<std::size_t>(ceil_share(sample_fraction, num), 1, num);
  partial_shuffle(order, take, rng);

  SubsampleDraw draw;
  draw.clusters.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(draw.clusters.begin(), draw.clusters.end());
  const auto k = static_cast<std::size_t>(std::max(samples_per_cluster, 1));
  for (int j : draw.clusters) {
    const auto& members = idx.members[j];
    if (members.size() <= k) {
      draw.samples.insert(draw.samples.end(), members.begin(), members.end());
    } else {
      std::vector<int> pool = members;
      partial_shuffle(pool, k, rng);
      draw.samples.insert(draw.samples.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }
  std::sort(draw.samples.begin(), draw.samples.end());
  return draw;
}

SubsampleDraw draw_cluster_subsample(const ClusterIndex& idx, const ForestParams& params, std::mt19937_64& rng) {
  return draw_cluster_subsample(idx, params.sample_fraction, params.resolved_samples_per_cluster(idx), rng);
}

Tree grow_tree(const Eigen::MatrixXd& x, const SplitLabeler& labeler, std::vector<int> sample,
               std::span<const int> candidate_features, const ForestParams& params, std::mt19937_64& rng) {
  Tree tree;
  partial_shuffle(sample, sample.size(), rng);
  std::size_t n_split = 0;
  if (sample.size() >= 2) {
    n_split = std::clamp<std::size_t>(
        static_cast<std::size_t>(params.honesty_fraction * static_cast<double>(sample.size())), 1, sample.size() - 1);
  }
  tree.split_sample.assign(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(n_split));
  tree.estimation_sample.assign(sample.begin() + static_cast<std::ptrdiff_t>(n_split), sample.end());
  std::sort(tree.estimation_sample.begin(), tree.estimation_sample.end());

  tree.nodes.emplace_back();
  const bool can_split =
      !candidate_features.empty() && sample.size() >= 2 * static_cast<std::size_t>(params.min_node_size);
  if (can_split) {
    SplitFinder finder(x, candidate_features, params);
    std::vector<double> labels;
    std::vector<std::pair<int, std::vector<int>>> stack;
    stack.emplace_back(0, tree.split_sample);
    std::sort(stack.back().second.begin(), stack.back().second.end());
    while (!stack.empty()) {
      auto [id, node] = std::move(stack.back());
      stack.pop_back();
      if (node.size() < 2 * static_cast<std::size_t>(params.min_node_size)) continue;
      labels.assign(node.size(), 0.0);
      if (!labeler(node, labels)) continue;
      const Split split = finder.best(node, labels, rng);
      if (split.feature < 0) continue;

      std::vector<int> left, right;
      for (int i : node) (x(i, split.feature) <= split.threshold ? left : right).push_back(i);
      const int depth = tree.nodes[id].depth;
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back().depth = depth + 1;
      tree.nodes.emplace_back().depth = depth + 1;
      TreeNode& parent = tree.nodes[id];
      parent.feature = split.feature;
      parent.threshold = split.threshold;
      parent.left = l;
      parent.right = l + 1;
      // Right first so the left subtree is expanded first.
      stack.emplace_back(l + 1, std::move(right));
      stack.emplace_back(l, std::move(left));
    }
  }

  for (int i : tree.estimation_sample) tree.nodes[tree.leaf_of(x.row(i))].samples.push_back(i);
  return tree;
}

Tree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& responses, std::vector<int> sample,
               const ForestParams& params, std::mt19937_64& rng) {
  std::vector<int> features(static_cast<std::size_t>(x.cols()));
  std::iota(features.begin(), features.end(), 0);
  SplitLabeler labeler = [&responses](std::span<const int> node, std::span<double> out) {
    for (std::size_t k = 0; k < node.size(); ++k) out[k] = responses[node[k]];
    return true;
  };
  return grow_tree(x, labeler, std::move(sample), features, params, rng);
}

}  // namespace cforest
