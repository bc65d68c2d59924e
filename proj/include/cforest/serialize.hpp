#pragma once

#include <string>

#include <json.hpp>

#include "cforest/causal.hpp"
#include "cforest/forest.hpp"

namespace cforest {

using Json = nlohmann::ordered_json;

inline constexpr int kForestFormatVersion = 1;

Json params_to_json(const ForestParams& p);
/// Fields absent from `j` keep their value in `base`. Unknown keys throw ConfigError.
ForestParams params_from_json(const Json& j, ForestParams base = {});

/// Versioned document with params, per-tree drawn clusters, honest halves and
/// nodes (leaf estimation lists included). Doubles round-trip exactly.
Json forest_to_json(const Forest& f);
Forest forest_from_json(const Json& j);

/// Nuisance vectors, causal forest, selected features and residuals.
Json model_to_json(const CausalForestModel& m);
CausalForestModel model_from_json(const Json& j);

void save_json(const Json& j, const std::string& path);
Json load_json(const std::string& path);

}  // namespace cforest
