// Minimal JSON Schema validator covering the keywords the committed schemas
// use: type, enum, required, properties, additionalProperties, items,
// minimum, maximum, maxItems.
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace threadfuzz::testing {

// Violations as "path: message"; empty when the instance conforms.
std::vector<std::string> schema_errors(const nlohmann::json& instance, const nlohmann::json& schema);

nlohmann::json load_schema(const std::string& name);  // schemas/<name>.schema.json

}  // namespace threadfuzz::testing
