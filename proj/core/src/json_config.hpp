#pragma once

// JSON mapping of configuration structs (internal to the library).

#include "bimamsleep/model.hpp"

#include <json.hpp>

#include <initializer_list>
#include <string>
#include <string_view>

namespace bimamsleep::detail {

using nlohmann::json;

// Throws ConfigError naming the first key of `j` that is not in `allowed`.
void reject_unknown_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed);

// Typed field readers; errors name `where.key`.
double get_number(const json& j, std::string_view where, const char* key);
std::size_t get_count(const json& j, std::string_view where, const char* key);
bool get_bool(const json& j, std::string_view where, const char* key);
std::string get_string(const json& j, std::string_view where, const char* key);

json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const json& j);

} // namespace bimamsleep::detail
