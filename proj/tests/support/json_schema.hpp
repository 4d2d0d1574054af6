#pragma once

// Validator for the JSON-schema subset used by the wire-protocol schemas:
// type, required, properties, additionalProperties=false, items, minItems,
// maxItems, minimum, pattern, enum.

#include <json.hpp>

#include <fstream>
#include <regex>
#include <string>
#include <vector>

namespace avatar_forge::testing {

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
}

inline bool json_type_matches(const nlohmann::json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    return false;
}

inline void validate_json(const nlohmann::json& v, const nlohmann::json& schema, const std::string& at,
                          std::vector<std::string>& errors) {
    if (schema.contains("type") && !json_type_matches(v, schema["type"].get<std::string>())) {
        errors.push_back(at + ": expected " + schema["type"].get<std::string>());
        return;
    }
    if (schema.contains("enum") && std::find(schema["enum"].begin(), schema["enum"].end(), v) == schema["enum"].end())
        errors.push_back(at + ": value not in enum");
    if (schema.contains("minimum") && v.is_number() && v.get<double>() < schema["minimum"].get<double>())
        errors.push_back(at + ": below minimum");
    if (schema.contains("pattern") && v.is_string() &&
        !std::regex_match(v.get<std::string>(), std::regex(schema["pattern"].get<std::string>())))
        errors.push_back(at + ": pattern mismatch");
    if (v.is_object()) {
        for (const auto& key : schema.value("required", nlohmann::json::array()))
            if (!v.contains(key.get<std::string>())) errors.push_back(at + ": missing " + key.get<std::string>());
        const auto props = schema.value("properties", nlohmann::json::object());
        for (const auto& [key, value] : v.items()) {
            if (props.contains(key)) validate_json(value, props[key], at + "." + key, errors);
            else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false)
                errors.push_back(at + ": unexpected property " + key);
        }
    }
    if (v.is_array()) {
        if (schema.contains("minItems") && v.size() < schema["minItems"].get<size_t>()) errors.push_back(at + ": too few items");
        if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<size_t>()) errors.push_back(at + ": too many items");
        if (schema.contains("items"))
            for (size_t i = 0; i < v.size(); ++i) validate_json(v[i], schema["items"], at + "[" + std::to_string(i) + "]", errors);
    }
}

inline std::vector<std::string> schema_errors(const nlohmann::json& v, const nlohmann::json& schema) {
    std::vector<std::string> errors;
    validate_json(v, schema, "$", errors);
    return errors;
}

}  // namespace avatar_forge::testing
