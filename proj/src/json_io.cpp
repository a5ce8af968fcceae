#include "everest/json_io.hpp"

#include "everest/errors.hpp"

#include <cmath>

namespace everest {

using nlohmann::json;

namespace {

json number(double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

json optional_number(const std::optional<double>& v) {
    return v ? number(*v) : json(nullptr);
}

} // namespace

json to_json(const ResultEntry& e, QueryMode mode) {
    return {{"inputId", e.input}, {mode == QueryMode::highest ? "score" : "distance", number(e.distance)}};
}

json to_json(const QueryStats& s) {
    json thresholds = json::array();
    for (double t : s.thresholds) thresholds.push_back(number(t));
    return {{"inputsRun", s.inputsRun},
            {"inputsSeen", s.inputsSeen},
            {"cacheHits", s.cacheHits},
            {"roundsExecuted", s.roundsExecuted},
            {"maiSteps", s.maiSteps},
            {"perNeuronDepth", s.perNeuronDepth},
            {"finalThreshold", number(s.finalThreshold)},
            {"thresholds", thresholds},
            {"thetaAchieved", optional_number(s.thetaAchieved)},
            {"stoppedEarly", s.stoppedEarly},
            {"truncated", s.truncated},
            {"exhausted", s.exhausted},
            {"indexBytesRead", s.indexBytesRead}};
}

json to_json(const TopKResult& r, QueryMode mode) {
    json entries = json::array();
    for (const auto& e : r.entries) entries.push_back(to_json(e, mode));
    return {{"entries", entries}, {"stats", to_json(r.stats)}};
}

json to_json(const PartialResult& p, QueryMode mode) {
    json entries = json::array();
    for (const auto& e : p.entries) entries.push_back(to_json(e, mode));
    return {{"partial", entries}, {"threshold", number(p.threshold)}, {"theta", optional_number(p.theta)},
            {"iteration", p.iteration}};
}

json to_json(const CatalogEntry& e) {
    return {{"layerId", e.layer.index},
            {"state", std::string(to_string(e.state))},
            {"npiPath", e.npiPath.string()},
            {"maiPath", e.maiPath.string()},
            {"bytes", e.bytes},
            {"nPartitions", e.config.nPartitions},
            {"ratio", e.config.ratio}};
}

json to_json(const VerificationReport& r) {
    json failures = json::array();
    for (const auto& f : r.failures) {
        failures.push_back({{"query", f.queryIdx}, {"kind", f.kind}, {"detail", f.detail}});
    }
    return {{"queries", r.queries},
            {"oracleMismatches", r.oracleMismatches},
            {"boundChecks", r.boundChecks},
            {"boundViolations", r.boundViolations},
            {"maxSlack", r.maxExcess},
            {"maiQueries", r.maiQueries},
            {"iqaQueries", r.iqaQueries},
            {"highestQueries", r.highestQueries},
            {"failures", failures}};
}

QuerySpec query_from_json(const json& body) {
    if (!body.is_object()) {
        throw InvalidQuery("query body must be a JSON object");
    }
    try {
        QuerySpec spec;
        spec.layer = LayerId(body.at("layer").get<std::uint32_t>());
        spec.mode = parse_mode(body.value("mode", std::string("similar")));
        if (spec.mode == QueryMode::most_similar) {
            spec.target = body.at("target").get<InputId>();
        } else {
            spec.target = body.value("target", InputId{0});
        }
        spec.group = body.at("neurons").get<std::vector<NeuronId>>();
        spec.k = body.value("k", std::size_t{20});
        spec.distance = DistanceFn::parse(body.value("dist", std::string("l2")));
        if (body.contains("theta") && !body["theta"].is_null()) {
            spec.theta = body["theta"].get<double>();
        }
        spec.includeTarget = body.value("includeTarget", true);
        return spec;
    } catch (const json::exception& e) {
        throw InvalidQuery(std::string("malformed query: ") + e.what());
    }
}

json to_json(const QuerySpec& s) {
    json out = {{"layer", s.layer.index}, {"target", s.target},         {"neurons", s.group},
                {"k", s.k},               {"dist", s.distance.name()}, {"mode", std::string(to_string(s.mode))},
                {"includeTarget", s.includeTarget}};
    if (s.theta) out["theta"] = *s.theta;
    return out;
}

} // namespace everest
