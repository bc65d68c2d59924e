#include "cforest/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "cforest/error.hpp"
#include "csv_util.hpp"

namespace cforest {

namespace {

void assign_clusters(const std::vector<std::string>& labels, std::vector<int>& dense,
                     std::vector<std::string>& distinct) {
  std::unordered_map<std::string, int> seen;
  dense.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = seen.try_emplace(labels[i], static_cast<int>(distinct.size()));
    if (inserted) distinct.push_back(labels[i]);
    dense[i] = it->second;
  }
}

}  // namespace

Dataset::Dataset(Eigen::MatrixXd features, Eigen::VectorXd outcome, Eigen::VectorXd treatment,
                 std::vector<std::string> cluster_labels, std::vector<std::string> feature_names,
                 std::vector<std::string> feature_sources)
    : features_(std::move(features)),
      outcome_(std::move(outcome)),
      treatment_(std::move(treatment)),
      feature_names_(std::move(feature_names)),
      feature_sources_(std::move(feature_sources)) {
  const Index n = outcome_.size();
  if (n < 1) throw ValidationError("dataset must contain at least one sample");
  if (features_.rows() != n || treatment_.size() != n)
    throw ValidationError("features, outcome and treatment must have the same number of rows");
  if (!features_.allFinite()) throw ValidationError("non-finite value in features");
  if (!outcome_.allFinite()) throw ValidationError("non-finite value in outcome");
  for (Index i = 0; i < n; ++i) {
    if (treatment_[i] != 0.0 && treatment_[i] != 1.0)
      throw ValidationError("treatment value at row " + std::to_string(i + 1) + " is not 0 or 1");
  }

  if (cluster_labels.empty()) {
    cluster_labels.resize(n);
    for (Index i = 0; i < n; ++i) cluster_labels[i] = std::to_string(i + 1);
  }
  if (static_cast<Index>(cluster_labels.size()) != n)
    throw ValidationError("cluster label vector has wrong length");
  assign_clusters(cluster_labels, cluster_, cluster_labels_);

  if (feature_names_.empty()) {
    for (Index j = 0; j < p(); ++j) feature_names_.push_back("X" + std::to_string(j + 1));
  }
  if (static_cast<Index>(feature_names_.size()) != p()) throw ValidationError("feature name count does not match p");
  if (feature_sources_.empty()) feature_sources_ = feature_names_;
  if (feature_sources_.size() != feature_names_.size())
    throw ValidationError("feature source count does not match p");
}

std::optional<Index> Dataset::feature_index(const std::string& name) const {
  auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
  if (it == feature_names_.end()) return std::nullopt;
  return static_cast<Index>(it - feature_names_.begin());
}

Dataset Dataset::without_clusters() const {
  return Dataset(features_, outcome_, treatment_, {}, feature_names_, feature_sources_);
}

Dataset Dataset::rows(std::span<const int> idx) const {
  Eigen::MatrixXd x(static_cast<Index>(idx.size()), p());
  Eigen::VectorXd y(x.rows()), w(x.rows());
  std::vector<std::string> labels(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    x.row(static_cast<Index>(r)) = features_.row(idx[r]);
    y[static_cast<Index>(r)] = outcome_[idx[r]];
    w[static_cast<Index>(r)] = treatment_[idx[r]];
    labels[r] = cluster_labels_[cluster_[idx[r]]];
  }
  return Dataset(std::move(x), std::move(y), std::move(w), std::move(labels), feature_names_, feature_sources_);
}

Dataset Dataset::with_outcome(Eigen::VectorXd outcome) const {
  std::vector<std::string> labels(n());
  for (Index i = 0; i < n(); ++i) labels[i] = cluster_labels_[cluster_[i]];
  return Dataset(features_, std::move(outcome), treatment_, std::move(labels), feature_names_, feature_sources_);
}

std::vector<int> ClusterIndex::sizes() const {
  std::vector<int> s(members.size());
  for (std::size_t j = 0; j < members.size(); ++j) s[j] = static_cast<int>(members[j].size());
  return s;
}

ClusterIndex build_cluster_index(std::span<const int> cluster_of) {
  ClusterIndex idx;
  idx.cluster_of.assign(cluster_of.begin(), cluster_of.end());
  int num = 0;
  for (int c : cluster_of) {
    if (c < 0) throw ValidationError("negative cluster index");
    num = std::max(num, c + 1);
  }
  idx.members.resize(num);
  for (std::size_t i = 0; i < cluster_of.size(); ++i) idx.members[cluster_of[i]].push_back(static_cast<int>(i));
  for (const auto& m : idx.members) {
    if (m.empty()) throw ValidationError("cluster index has an empty cluster");
  }
  return idx;
}

ClusterIndex build_cluster_index(const Dataset& d) { return build_cluster_index(d.cluster()); }

Dataset load_csv(const std::string& path, const SchemaConfig& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  const std::vector<std::string> header = detail::split_csv_line(line, 1);

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("column '" + name + "' not found in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t y_col = column(schema.outcome_column);
  const std::size_t w_col = column(schema.treatment_column);
  std::optional<std::size_t> c_col;
  if (schema.cluster_column) c_col = column(*schema.cluster_column);
  if (y_col == w_col || (c_col && (*c_col == y_col || *c_col == w_col)))
    throw SchemaError("outcome, treatment and cluster columns must be distinct");
  std::vector<bool> categorical(header.size(), false);
  for (const auto& name : schema.categorical_columns) {
    const std::size_t c = column(name);
    if (c == y_col || c == w_col || (c_col && c == *c_col))
      throw SchemaError("categorical column '" + name + "' is also a role column");
    categorical[c] = true;
  }

  std::vector<std::vector<std::string>> cells;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line, row);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       row);
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string& f = fields[c];
      if (f.empty() || f == "NA" || f == "NaN") throw ParseError("missing value in column '" + header[c] + "'", row);
    }
    cells.push_back(std::move(fields));
  }
  const Index n = static_cast<Index>(cells.size());
  if (n == 0) throw ValidationError("no data rows in " + path);

  auto number = [&](std::size_t r, std::size_t c) {
    auto v = detail::parse_double(cells[r][c]);
    if (!v)
      throw ParseError("non-numeric value '" + cells[r][c] + "' in column '" + header[c] + "'", static_cast<long>(r) + 2);
    return *v;
  };

  Eigen::VectorXd y(n), w(n);
  std::vector<std::string> clusters;
  for (Index r = 0; r < n; ++r) {
    y[r] = number(r, y_col);
    w[r] = number(r, w_col);
    if (w[r] != 0.0 && w[r] != 1.0)
      throw ValidationError("treatment value '" + cells[r][w_col] + "' at row " + std::to_string(r + 2) +
                            " is not 0 or 1");
    if (c_col) clusters.push_back(cells[r][*c_col]);
  }

  std::vector<Eigen::VectorXd> columns;
  std::vector<std::string> names, sources;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == y_col || c == w_col || (c_col && c == *c_col)) continue;
    if (!categorical[c]) {
      Eigen::VectorXd col(n);
      for (Index r = 0; r < n; ++r) col[r] = number(r, c);
      columns.push_back(std::move(col));
      names.push_back(header[c]);
      sources.push_back(header[c]);
      continue;
    }
    std::vector<std::string> levels;
    for (Index r = 0; r < n; ++r) levels.push_back(cells[r][c]);
    std::sort(levels.begin(), levels.end(), detail::level_less);
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    for (const auto& level : levels) {
      Eigen::VectorXd col(n);
      for (Index r = 0; r < n; ++r) col[r] = cells[r][c] == level ? 1.0 : 0.0;
      columns.push_back(std::move(col));
      names.push_back(header[c] + "." + level);
      sources.push_back(header[c]);
    }
  }

  Eigen::MatrixXd x(n, static_cast<Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) x.col(static_cast<Index>(j)) = columns[j];
  return Dataset(std::move(x), std::move(y), std::move(w), std::move(clusters), std::move(names), std::move(sources));
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& name : d.feature_names()) out << name << ',';
  out << "Y,W,cluster\n";
  for (Index i = 0; i < d.n(); ++i) {
    for (Index j = 0; j < d.p(); ++j) out << detail::format_double(d.features()(i, j)) << ',';
    out << detail::format_double(d.outcome()[i]) << ',' << static_cast<int>(d.treatment()[i]) << ','
        << d.cluster_labels()[d.cluster()[i]] << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_oracle_csv(const Oracle& oracle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "true_propensity,true_cate,cluster_effect\n";
  for (Index i = 0; i < oracle.true_cate.size(); ++i) {
    out << detail::format_double(oracle.true_propensity[i]) << ',' << detail::format_double(oracle.true_cate[i]) << ','
        << detail::format_double(oracle.cluster_effect[i]) << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<int> split_clusters_kfold(const ClusterIndex& idx, int folds, std::uint64_t seed) {
  const Index num = idx.num_clusters();
  if (folds < 1) throw ParameterError("number of folds must be positive");
  if (folds > num)
    throw ParameterError("cannot split " + std::to_string(num) + " clusters into " + std::to_string(folds) + " folds");
  std::vector<int> order(num);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(num);
  for (Index k = 0; k < num; ++k) fold[order[k]] = static_cast<int>(k % folds);
  return fold;
}

}  // namespace cforest
