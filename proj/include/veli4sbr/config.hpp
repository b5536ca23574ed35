#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <type_traits>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "veli4sbr/common.hpp"

namespace veli4sbr {

/// A reference to one typed configuration field.
using ConfigField = std::variant<double*, int*, bool*, std::uint64_t*, std::string*>;

namespace config {

inline std::string format_value(const ConfigField& f) {
    return std::visit(
        [](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                return *p;
            } else if constexpr (std::is_same_v<T, bool>) {
                return *p ? "true" : "false";
            } else if constexpr (std::is_same_v<T, double>) {
                // Shortest form that parses back to the same double.
                char buf[40];
                for (int prec = 15; prec <= 17; ++prec) {
                    std::snprintf(buf, sizeof buf, "%.*g", prec, *p);
                    if (std::strtod(buf, nullptr) == *p) break;
                }
                return buf;
            } else {
                return std::to_string(*p);
            }
        },
        f);
}

inline void assign_value(const ConfigField& f, const std::string& key, std::string_view text) {
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            const auto t = util::trim(text);
            if constexpr (std::is_same_v<T, std::string>) {
                *p = std::string(t);
            } else if constexpr (std::is_same_v<T, bool>) {
                if (t == "true" || t == "1") *p = true;
                else if (t == "false" || t == "0") *p = false;
                else throw ConfigError("invalid boolean '" + std::string(t) + "' for " + key);
            } else if constexpr (std::is_same_v<T, double>) {
                *p = util::parse_double(t, key);
            } else {
                try {
                    const auto v = util::parse_int(t, key);
                    if constexpr (std::is_same_v<T, std::uint64_t>) {
                        if (v < 0) throw ConfigError("negative value for " + key);
                    }
                    *p = static_cast<T>(v);
                } catch (const DataError& e) {
                    throw ConfigError(e.what());
                }
            }
        },
        f);
}

/// Parses flat `key=value` text (blank lines and # comments allowed).
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0;
    for (const auto& line : util::split(text, '\n')) {
        ++line_no;
        const auto t = util::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        out.emplace_back(std::string(util::trim(t.substr(0, eq))), std::string(util::trim(t.substr(eq + 1))));
    }
    return out;
}

/// Applies key/value pairs to any struct exposing `fields()`; unknown keys are rejected.
template <class Config>
void apply(Config& cfg, const std::vector<std::pair<std::string, std::string>>& kvs) {
    auto fields = cfg.fields();
    for (const auto& [k, v] : kvs) {
        const auto it = fields.find(k);
        if (it == fields.end()) throw ConfigError("unknown config key '" + k + "'");
        assign_value(it->second, k, v);
    }
}

template <class Config>
std::string serialize(Config& cfg) {
    std::string out;
    for (const auto& [k, f] : cfg.fields()) out += k + "=" + format_value(f) + "\n";
    return out;
}

}  // namespace config
}  // namespace veli4sbr
