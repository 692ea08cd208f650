#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vicar::llm {

// Validates `value` against the JSON-Schema subset used by our output
// schemas: type, properties, required, additionalProperties (bool), items,
// minItems, maxItems, enum, minLength, minimum, maximum. Returns one message
// per violation, prefixed with the JSON pointer of the offending value.
std::vector<std::string> validate_schema(const nlohmann::json& schema, const nlohmann::json& value);

// Pulls a JSON document out of raw model text: tolerates code fences and
// prose around a single top-level object or array.
std::optional<nlohmann::json> extract_json(const std::string& raw_text, std::string* error = nullptr);

}  // namespace vicar::llm
