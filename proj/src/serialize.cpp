#include "cforest/serialize.hpp"

#include <fstream>
#include <set>

#include "cforest/error.hpp"

namespace cforest {
namespace {

Json vector_to_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

void require_format(const Json& j, const std::string& format) {
  if (!j.is_object() || j.value("format", "") != format)
    throw ValidationError("not a " + format + " document");
  const int version = j.value("version", 0);
  if (version != kForestFormatVersion)
    throw ValidationError("unsupported " + format + " version " + std::to_string(version));
}

template <typename F>
auto guarded(const std::string& what, F&& body) {
  try {
    return body();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed " + what + ": " + e.what());
  }
}

}  // namespace

Json params_to_json(const ForestParams& p) {
  Json j;
  j["num_trees"] = p.num_trees;
  j["sample_fraction"] = p.sample_fraction;
  j["samples_per_cluster"] = p.samples_per_cluster ? Json(*p.samples_per_cluster) : Json(nullptr);
  j["mtry"] = p.mtry ? Json(*p.mtry) : Json(nullptr);
  j["min_node_size"] = p.min_node_size;
  j["honesty_fraction"] = p.honesty_fraction;
  j["alpha"] = p.alpha;
  j["seed"] = p.seed;
  j["num_threads"] = p.num_threads;
  return j;
}

ForestParams params_from_json(const Json& j, ForestParams base) {
  if (!j.is_object()) throw ConfigError("forest parameters must be a JSON object");
  static const std::set<std::string> known = {"num_trees", "sample_fraction", "samples_per_cluster", "mtry",
                                              "min_node_size", "honesty_fraction", "alpha", "seed", "num_threads"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown forest parameter '" + key + "'");
  }
  try {
    if (j.contains("num_trees")) base.num_trees = j["num_trees"].get<int>();
    if (j.contains("sample_fraction")) base.sample_fraction = j["sample_fraction"].get<double>();
    if (j.contains("samples_per_cluster")) {
      const auto& v = j["samples_per_cluster"];
      base.samples_per_cluster = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
    }
    if (j.contains("mtry")) {
      const auto& v = j["mtry"];
      base.mtry = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
    }
    if (j.contains("min_node_size")) base.min_node_size = j["min_node_size"].get<int>();
    if (j.contains("honesty_fraction")) base.honesty_fraction = j["honesty_fraction"].get<double>();
    if (j.contains("alpha")) base.alpha = j["alpha"].get<double>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("num_threads")) base.num_threads = j["num_threads"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid forest parameter: ") + e.what());
  }
  return base;
}

Json forest_to_json(const Forest& f) {
  Json j;
  j["format"] = "cforest-forest";
  j["version"] = kForestFormatVersion;
  j["params"] = params_to_json(f.params);
  j["num_features"] = f.num_features;
  j["num_clusters"] = f.num_clusters;
  j["sample_cluster"] = f.sample_cluster;
  Json trees = Json::array();
  for (const Tree& t : f.trees) {
    Json jt;
    jt["drawn_clusters"] = t.drawn_clusters;
    jt["split_sample"] = t.split_sample;
    jt["estimation_sample"] = t.estimation_sample;
    Json nodes = Json::array();
    for (const TreeNode& n : t.nodes) {
      if (n.is_leaf()) {
        nodes.push_back({{"depth", n.depth}, {"samples", n.samples}});
      } else {
        nodes.push_back(
            {{"depth", n.depth}, {"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    jt["nodes"] = std::move(nodes);
    trees.push_back(std::move(jt));
  }
  j["trees"] = std::move(trees);
  return j;
}

Forest forest_from_json(const Json& j) {
  require_format(j, "cforest-forest");
  return guarded("forest document", [&] {
    Forest f;
    f.params = params_from_json(j.at("params"));
    f.num_features = j.at("num_features").get<Index>();
    f.num_clusters = j.at("num_clusters").get<Index>();
    f.sample_cluster = j.at("sample_cluster").get<std::vector<int>>();
    for (const auto& jt : j.at("trees")) {
      Tree t;
      t.drawn_clusters = jt.at("drawn_clusters").get<std::vector<int>>();
      t.split_sample = jt.at("split_sample").get<std::vector<int>>();
      t.estimation_sample = jt.at("estimation_sample").get<std::vector<int>>();
      const int num_nodes = static_cast<int>(jt.at("nodes").size());
      for (const auto& jn : jt.at("nodes")) {
        TreeNode n;
        n.depth = jn.at("depth").get<int>();
        if (jn.contains("feature")) {
          n.feature = jn.at("feature").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
          if (n.feature < 0 || n.feature >= f.num_features || n.left <= 0 || n.right <= 0 || n.left >= num_nodes ||
              n.right >= num_nodes)
            throw ValidationError("malformed forest document: inconsistent split node");
        } else {
          n.samples = jn.at("samples").get<std::vector<int>>();
          for (int s : n.samples) {
            if (s < 0 || s >= f.num_samples()) throw ValidationError("malformed forest document: leaf sample out of range");
          }
        }
        t.nodes.push_back(std::move(n));
      }
      if (t.nodes.empty()) throw ValidationError("malformed forest document: tree without nodes");
      f.trees.push_back(std::move(t));
    }
    return f;
  });
}

Json model_to_json(const CausalForestModel& m) {
  Json j;
  j["format"] = "cforest-model";
  j["version"] = kForestFormatVersion;
  j["params"] = params_to_json(m.params);
  j["selected_features"] = m.selected_features;
  const NuisanceEstimates& nu = m.nuisances;
  j["nuisances"] = {{"y_hat", vector_to_json(nu.y_hat)},
                    {"w_hat", vector_to_json(nu.w_hat)},
                    {"y_source", nu.y_source},
                    {"w_source", nu.w_source},
                    {"propensity_clipped", nu.propensity_clipped},
                    {"y_oob_filled", nu.y_oob_filled},
                    {"w_oob_filled", nu.w_oob_filled},
                    {"y_importance", vector_to_json(nu.y_importance)},
                    {"w_importance", vector_to_json(nu.w_importance)}};
  j["residual_y"] = vector_to_json(m.residual_y);
  j["residual_w"] = vector_to_json(m.residual_w);
  j["forest"] = forest_to_json(m.forest);
  return j;
}

CausalForestModel model_from_json(const Json& j) {
  require_format(j, "cforest-model");
  return guarded("model document", [&] {
    CausalForestModel m;
    m.params = params_from_json(j.at("params"));
    m.selected_features = j.at("selected_features").get<std::vector<int>>();
    const Json& jn = j.at("nuisances");
    m.nuisances.y_hat = vector_from_json(jn.at("y_hat"));
    m.nuisances.w_hat = vector_from_json(jn.at("w_hat"));
    m.nuisances.y_source = jn.at("y_source").get<std::string>();
    m.nuisances.w_source = jn.at("w_source").get<std::string>();
    m.nuisances.propensity_clipped = jn.at("propensity_clipped").get<long>();
    m.nuisances.y_oob_filled = jn.at("y_oob_filled").get<long>();
    m.nuisances.w_oob_filled = jn.at("w_oob_filled").get<long>();
    m.nuisances.y_importance = vector_from_json(jn.at("y_importance"));
    m.nuisances.w_importance = vector_from_json(jn.at("w_importance"));
    m.residual_y = vector_from_json(j.at("residual_y"));
    m.residual_w = vector_from_json(j.at("residual_w"));
    m.forest = forest_from_json(j.at("forest"));
    if (m.residual_y.size() != m.forest.num_samples() || m.residual_w.size() != m.forest.num_samples())
      throw ValidationError("malformed model document: residuals do not match the forest's training size");
    return m;
  });
}

void save_json(const Json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

Json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

}  // namespace cforest
