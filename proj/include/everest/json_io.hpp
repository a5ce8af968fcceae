#pragma once

#include "everest/nta.hpp"
#include "everest/storage.hpp"
#include "everest/verification.hpp"

#include <json.hpp>

namespace everest {

// Non-finite numbers are written as null.
nlohmann::json to_json(const ResultEntry& e, QueryMode mode);
nlohmann::json to_json(const QueryStats& stats);
nlohmann::json to_json(const TopKResult& result, QueryMode mode);
nlohmann::json to_json(const PartialResult& partial, QueryMode mode);
nlohmann::json to_json(const CatalogEntry& entry);
nlohmann::json to_json(const VerificationReport& report);

// {"layer", "target", "neurons": [...], "k", "dist", "mode", "theta",
//  "includeTarget"}; unknown fields are ignored. Throws InvalidQuery.
QuerySpec query_from_json(const nlohmann::json& body);
nlohmann::json to_json(const QuerySpec& spec);

} // namespace everest
