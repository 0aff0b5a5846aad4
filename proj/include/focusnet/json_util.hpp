#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace focusnet {

/// Raised for schema violations in configuration and manifest documents.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rejects any key of `j` not listed in `allowed`.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view context) {
    if (!j.is_object()) throw ConfigError(std::string(context) + " must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || item.key() == a;
        if (!known)
            throw ConfigError("unknown key '" + item.key() + "' in " + std::string(context));
    }
}

/// Assigns j[key] to `out` when present; wraps type errors with the key path.
template <typename T>
void read_opt(const nlohmann::json& j, std::string_view key, T& out, std::string_view context) {
    auto it = j.find(std::string(key));
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(context) + "." + std::string(key) + ": " + e.what());
    }
}

}  // namespace focusnet
