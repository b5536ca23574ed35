#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace veli4sbr {

using ItemId = std::int64_t;
using SessionId = std::int64_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or structurally invalid data.
class DataError : public Error {
public:
    using Error::Error;
};

/// A response that does not match the expected output contract.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Backend unreachable or returned a non-success status after all retries.
class TransportError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

namespace util {

inline std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class Range>
std::string join(const Range& parts, std::string_view sep) {
    std::string out;
    bool first = true;
    for (const auto& p : parts) {
        if (!first) out += sep;
        first = false;
        if constexpr (std::is_arithmetic_v<std::decay_t<decltype(p)>>)
            out += std::to_string(p);
        else
            out += p;
    }
    return out;
}

inline std::int64_t parse_int(std::string_view s, std::string_view what) {
    const auto t = trim(s);
    if (t.empty()) throw DataError("empty integer for " + std::string(what));
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(std::string(t), &used);
    } catch (const std::exception&) {
        throw DataError("invalid integer '" + std::string(t) + "' for " + std::string(what));
    }
    if (used != t.size())
        throw DataError("invalid integer '" + std::string(t) + "' for " + std::string(what));
    return v;
}

inline double parse_double(std::string_view s, std::string_view what) {
    const auto t = trim(s);
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(std::string(t), &used);
    } catch (const std::exception&) {
        throw ConfigError("invalid number '" + std::string(t) + "' for " + std::string(what));
    }
    if (used != t.size())
        throw ConfigError("invalid number '" + std::string(t) + "' for " + std::string(what));
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << content;
    if (!out) throw DataError("write failed for " + path);
}

/// Stateless 64-bit mixer (splitmix64 finalizer). Used wherever a decision
/// must be a pure function of a few integers.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

/// Uniform double in [0,1) from a hash value.
constexpr double unit_interval(std::uint64_t h) {
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

}  // namespace util
}  // namespace veli4sbr
