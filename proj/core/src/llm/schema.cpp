#include "vicar/llm/schema.hpp"

#include <cmath>

namespace vicar::llm {
namespace {

using nlohmann::json;

bool type_matches(const std::string& type, const json& value) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "integer") {
    if (value.is_number_integer()) return true;
    return value.is_number_float() && std::floor(value.get<double>()) == value.get<double>();
  }
  if (type == "number") return value.is_number();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

std::string where(const std::string& pointer) { return pointer.empty() ? "/" : pointer; }

void validate(const json& schema, const json& value, const std::string& pointer,
              std::vector<std::string>& errors) {
  if (!schema.is_object()) return;

  if (auto it = schema.find("type"); it != schema.end()) {
    bool ok = false;
    if (it->is_string()) {
      ok = type_matches(it->get<std::string>(), value);
    } else if (it->is_array()) {
      for (const auto& t : *it) ok = ok || type_matches(t.get<std::string>(), value);
    }
    if (!ok) {
      errors.push_back(where(pointer) + ": expected type " + it->dump() + ", got " +
                       std::string(value.type_name()));
      return;
    }
  }

  if (auto it = schema.find("enum"); it != schema.end() && it->is_array()) {
    bool found = false;
    for (const auto& candidate : *it) found = found || candidate == value;
    if (!found) errors.push_back(where(pointer) + ": value " + value.dump() + " not in " + it->dump());
  }

  if (value.is_string()) {
    if (auto it = schema.find("minLength"); it != schema.end()) {
      if (value.get<std::string>().size() < it->get<std::size_t>()) {
        errors.push_back(where(pointer) + ": string shorter than " + it->dump());
      }
    }
  }

  if (value.is_number()) {
    if (auto it = schema.find("minimum"); it != schema.end() && value.get<double>() < it->get<double>()) {
      errors.push_back(where(pointer) + ": below minimum " + it->dump());
    }
    if (auto it = schema.find("maximum"); it != schema.end() && value.get<double>() > it->get<double>()) {
      errors.push_back(where(pointer) + ": above maximum " + it->dump());
    }
  }

  if (value.is_object()) {
    const json* properties = nullptr;
    if (auto it = schema.find("properties"); it != schema.end()) properties = &*it;
    if (auto it = schema.find("required"); it != schema.end()) {
      for (const auto& name : *it) {
        if (!value.contains(name.get<std::string>())) {
          errors.push_back(where(pointer) + ": missing required field \"" + name.get<std::string>() + "\"");
        }
      }
    }
    const bool closed = schema.value("additionalProperties", true) == false;
    for (const auto& [key, child] : value.items()) {
      if (properties && properties->contains(key)) {
        validate((*properties)[key], child, pointer + "/" + key, errors);
      } else if (closed) {
        errors.push_back(where(pointer) + ": unexpected field \"" + key + "\"");
      }
    }
  }

  if (value.is_array()) {
    if (auto it = schema.find("minItems"); it != schema.end() && value.size() < it->get<std::size_t>()) {
      errors.push_back(where(pointer) + ": expected at least " + it->dump() + " items, got " +
                       std::to_string(value.size()));
    }
    if (auto it = schema.find("maxItems"); it != schema.end() && value.size() > it->get<std::size_t>()) {
      errors.push_back(where(pointer) + ": expected at most " + it->dump() + " items, got " +
                       std::to_string(value.size()));
    }
    if (auto it = schema.find("items"); it != schema.end()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        validate(*it, value[i], pointer + "/" + std::to_string(i), errors);
      }
    }
  }
}

std::string_view strip_fences(std::string_view s) {
  const auto open = s.find("```");
  if (open == std::string_view::npos) return s;
  auto body_start = s.find('\n', open);
  if (body_start == std::string_view::npos) return s;
  ++body_start;
  const auto close = s.find("```", body_start);
  if (close == std::string_view::npos) return s.substr(body_start);
  return s.substr(body_start, close - body_start);
}

}  // namespace

std::vector<std::string> validate_schema(const json& schema, const json& value) {
  std::vector<std::string> errors;
  validate(schema, value, "", errors);
  return errors;
}

std::optional<json> extract_json(const std::string& raw_text, std::string* error) {
  std::string_view body = strip_fences(raw_text);
  json parsed = json::parse(body, nullptr, false);
  if (!parsed.is_discarded() && (parsed.is_object() || parsed.is_array())) return parsed;

  // Fall back to the widest {...} or [...] span.
  const auto first_obj = body.find('{');
  const auto first_arr = body.find('[');
  const auto first = std::min(first_obj, first_arr);
  if (first != std::string_view::npos) {
    const char close = body[first] == '{' ? '}' : ']';
    const auto last = body.rfind(close);
    if (last != std::string_view::npos && last > first) {
      parsed = json::parse(body.substr(first, last - first + 1), nullptr, false);
      if (!parsed.is_discarded()) return parsed;
    }
  }
  if (error) *error = "response is not a JSON document";
  return std::nullopt;
}

}  // namespace vicar::llm
