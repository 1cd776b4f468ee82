#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "metalens/errors.hpp"

namespace metalens {

/// Rejects objects carrying keys outside `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               std::string_view context) {
  if (!j.is_object()) throw ContractError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ContractError(std::string(context) + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

}  // namespace metalens
