#pragma once

#include <vector>

#include <json.hpp>

#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"

namespace tmnre {

/// [[lo, hi], ...]
nlohmann::json to_json(const TruncationRegion& region);
TruncationRegion region_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

/// {"kind": "uniform", "params": [lo, hi]} / {"kind": "normal", "params": [mean, std]}
nlohmann::json to_json(const PriorComponent& c);
PriorComponent component_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FactorizablePrior& prior);
FactorizablePrior prior_from_json(const nlohmann::json& j);

}  // namespace tmnre
