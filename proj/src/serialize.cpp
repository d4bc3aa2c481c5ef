#include "tmnre/serialize.hpp"

#include "tmnre/errors.hpp"

namespace tmnre {

nlohmann::json to_json(const TruncationRegion& region) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& iv : region.intervals()) out.push_back({iv.lo, iv.hi});
    return out;
}

TruncationRegion region_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw PreconditionError("region must be an array of [lo, hi] pairs");
    std::vector<Interval> intervals;
    for (const auto& pair : j) {
        if (!pair.is_array() || pair.size() != 2) throw PreconditionError("region entries must be [lo, hi] pairs");
        intervals.push_back({pair[0].get<double>(), pair[1].get<double>()});
    }
    return TruncationRegion(std::move(intervals));
}

nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json to_json(const PriorComponent& c) {
    return {{"kind", c.kind() == PriorComponent::Kind::uniform ? "uniform" : "normal"}, {"params", {c.param(0), c.param(1)}}};
}

PriorComponent component_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != 2) throw PreconditionError("prior component needs exactly two params");
    if (kind == "uniform") return PriorComponent::uniform(params[0], params[1]);
    if (kind == "normal") return PriorComponent::normal(params[0], params[1]);
    throw PreconditionError("unknown prior kind '" + kind + "'");
}

nlohmann::json to_json(const FactorizablePrior& prior) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : prior.components()) out.push_back(to_json(c));
    return out;
}

FactorizablePrior prior_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw PreconditionError("prior must be a non-empty list of components");
    std::vector<PriorComponent> components;
    for (const auto& c : j) components.push_back(component_from_json(c));
    return FactorizablePrior(std::move(components));
}

}  // namespace tmnre
