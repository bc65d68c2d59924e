#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cforest/data.hpp"
#include "cforest/error.hpp"
#include "cforest/forest.hpp"
#include "cforest/serialize.hpp"

namespace cforest::cli {

struct SimulateConfig {
  std::string kind = "school";  // "school" | "confounded"
  Index n = 1000;               // confounded only
  Index p = 10;                 // confounded only
  Index clusters = 76;          // school only
  Index cluster_size = 137;     // school only: mean students per school
  SchoolEffectSpec school;
};

struct RunConfig {
  std::optional<std::string> data;
  SchemaConfig schema;
  ForestParams nuisance_forest;
  ForestParams causal_forest;
  std::uint64_t seed = 42;
  bool cluster = true;
  bool trivial_propensity = false;
  int folds = 5;
  bool select_features = true;
  bool tune = true;
  int pilot_trees = 200;
  std::optional<int> final_samples_per_cluster = 50;
  int histogram_bins = 20;
  /// Feature names treated as school-level; empty means every feature that is
  /// constant within each cluster.
  std::vector<std::string> school_covariates;
  /// School covariates tested with Welch (median split) and tercile ANOVA;
  /// empty means all school covariates.
  std::vector<std::string> moderators;
  std::string out = "out";
  SimulateConfig simulate;
};

/// Overlays `j` onto `base`. Unknown keys at any level throw ConfigError.
RunConfig parse_run_config(const Json& j, RunConfig base = {});
/// Every field, defaults included.
Json config_to_json(const RunConfig& c);

int exit_code(ErrorKind kind);

/// Runs the command line `args` (without the program name). Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cforest::cli
