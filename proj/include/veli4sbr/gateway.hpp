#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "veli4sbr/common.hpp"
#include "veli4sbr/data.hpp"
#include "veli4sbr/hashing.hpp"
#include "veli4sbr/prompts.hpp"

namespace veli4sbr {

using prompts::TemplateId;

struct PromptRequest {
    TemplateId template_id = TemplateId::P3;
    std::string rendered_text;
    double temperature = 0.0;
    std::string model_id = "mock";
};

/// A text-completion backend. Implementations throw TransportError for
/// failures that are worth retrying.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const PromptRequest& request) = 0;
};

inline std::string cache_key(const PromptRequest& r) {
    char temp[32];
    std::snprintf(temp, sizeof temp, "%.6f", r.temperature);
    std::string material;
    material += r.model_id;
    material += '\x1f';
    material += prompts::to_string(r.template_id);
    material += '\x1f';
    material += prompts::template_hash(r.template_id);
    material += '\x1f';
    material += temp;
    material += '\x1f';
    material += r.rendered_text;
    return hashing::sha256_hex(material);
}

/// Append-only response cache, one `key<TAB>base64(response)` line per entry.
/// An empty path keeps the cache in memory only.
class CacheStore {
public:
    CacheStore() = default;

    explicit CacheStore(std::filesystem::path path) : path_(std::move(path)) {
        if (std::filesystem::exists(path_)) {
            const auto lines = util::split(util::read_file(path_.string()), '\n');
            std::size_t line_no = 0;
            for (const auto& line : lines) {
                ++line_no;
                if (line.empty()) continue;
                const auto tab = line.find('\t');
                if (tab == std::string::npos) {
                    // A torn final line from an interrupted writer is dropped.
                    if (line_no == lines.size()) continue;
                    throw DataError("cache line " + std::to_string(line_no) + ": malformed");
                }
                entries_[line.substr(0, tab)] = hashing::base64_decode(line.substr(tab + 1));
            }
        }
    }

    std::optional<std::string> get(const std::string& key) const {
        std::lock_guard lock(mu_);
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& key, const std::string& response) {
        std::lock_guard lock(mu_);
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app | std::ios::binary);
            out << key << '\t' << hashing::base64_encode(response) << '\n';
            out.flush();
            if (!out) throw Error("cache write failed: " + path_.string());
        }
        entries_[key] = response;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::string> entries_;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{200};
};

struct GatewayStats {
    std::size_t backend_calls = 0;
    std::size_t cache_hits = 0;
    std::size_t transport_failures = 0;
};

/// Cached, retrying front door to a completion backend. Safe for concurrent callers.
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<CacheStore> cache, RetryPolicy retry = {})
        : backend_(std::move(backend)), cache_(std::move(cache)), retry_(retry) {
        if (!cache_) cache_ = std::make_shared<CacheStore>();
    }

    std::string complete(const PromptRequest& request) {
        if (util::trim(request.rendered_text).empty()) throw Error("empty prompt");
        const auto key = cache_key(request);
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return !in_flight_.contains(key); });
            if (auto hit = cache_->get(key)) {
                ++stats_.cache_hits;
                return *hit;
            }
            in_flight_.insert(key);
        }
        struct Release {
            Gateway* g;
            const std::string& key;
            ~Release() {
                {
                    std::lock_guard lock(g->mu_);
                    g->in_flight_.erase(key);
                }
                g->cv_.notify_all();
            }
        } release{this, key};

        if (!backend_) throw ConfigError("no completion backend configured");
        std::string last_error;
        for (int attempt = 0; attempt < retry_.attempts; ++attempt) {
            if (attempt > 0 && retry_.base_delay.count() > 0)
                std::this_thread::sleep_for(retry_.base_delay * (1 << (attempt - 1)));
            try {
                {
                    std::lock_guard lock(mu_);
                    ++stats_.backend_calls;
                }
                auto text = backend_->complete(request);
                cache_->put(key, text);
                return text;
            } catch (const TransportError& e) {
                last_error = e.what();
            }
        }
        {
            std::lock_guard lock(mu_);
            ++stats_.transport_failures;
        }
        throw TransportError("backend failed after " + std::to_string(retry_.attempts) +
                             " attempts: " + last_error);
    }

    GatewayStats stats() const {
        std::lock_guard lock(mu_);
        return stats_;
    }

    std::string model_id = "mock";

private:
    std::shared_ptr<Backend> backend_;
    std::shared_ptr<CacheStore> cache_;
    RetryPolicy retry_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::unordered_set<std::string> in_flight_;
    GatewayStats stats_;
};

// ---------------------------------------------------------------------------
// Response parsing

struct PcResponse {
    std::vector<std::string> intents;
    ItemId next_item = 0;
    std::string reason;
};

namespace detail {

/// End index (inclusive) of the balanced JSON value starting at `start`, or npos.
inline std::size_t match_brackets(std::string_view s, std::size_t start) {
    const char open = s[start];
    const char close = open == '{' ? '}' : ']';
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == open) ++depth;
        else if (c == close && --depth == 0) return i;
    }
    return std::string_view::npos;
}

inline std::optional<PcResponse> as_pc_response(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("intents") || !j.contains("next_item")) return std::nullopt;
    const auto& intents = j["intents"];
    if (!intents.is_array() || intents.empty()) return std::nullopt;
    PcResponse r;
    for (const auto& v : intents) {
        if (!v.is_string()) return std::nullopt;
        const auto t = util::trim(v.get_ref<const std::string&>());
        if (t.empty()) return std::nullopt;
        r.intents.emplace_back(t);
    }
    const auto& next = j["next_item"];
    if (next.is_number_integer()) {
        r.next_item = next.get<ItemId>();
    } else if (next.is_string()) {
        try {
            r.next_item = util::parse_int(next.get_ref<const std::string&>(), "next_item");
        } catch (const DataError&) {
            return std::nullopt;
        }
    } else {
        return std::nullopt;
    }
    if (j.contains("reason") && j["reason"].is_string()) r.reason = j["reason"].get<std::string>();
    return r;
}

}  // namespace detail

/// Extracts the first object in `raw` that satisfies the predict-and-correct
/// output contract. Surrounding prose is ignored. Never aborts: every failure
/// surfaces as ParseError.
inline PcResponse parse_pc_response(std::string_view raw) {
    bool saw_object = false;
    for (std::size_t i = raw.find('{'); i != std::string_view::npos; i = raw.find('{', i + 1)) {
        const auto end = detail::match_brackets(raw, i);
        if (end == std::string_view::npos) continue;
        const auto j = nlohmann::json::parse(raw.substr(i, end - i + 1), nullptr, false);
        if (j.is_discarded()) continue;
        saw_object = true;
        if (auto r = detail::as_pc_response(j)) return *r;
    }
    throw ParseError(saw_object ? "no object matches {intents, next_item} with non-empty intents"
                                : "no JSON object found in response");
}

/// Parses an intent list: the first JSON array of strings (or an object with
/// an "intents" array), else one entry per bulleted/numbered line.
inline std::vector<std::string> parse_intent_list(std::string_view raw) {
    std::vector<std::string> out;
    for (std::size_t i = raw.find_first_of("[{"); i != std::string_view::npos;
         i = raw.find_first_of("[{", i + 1)) {
        const auto end = detail::match_brackets(raw, i);
        if (end == std::string_view::npos) continue;
        auto j = nlohmann::json::parse(raw.substr(i, end - i + 1), nullptr, false);
        if (j.is_discarded()) continue;
        if (j.is_object() && j.contains("intents")) j = j["intents"];
        if (!j.is_array()) continue;
        bool ok = !j.empty();
        for (const auto& v : j) ok = ok && v.is_string();
        if (!ok) continue;
        for (const auto& v : j) {
            const auto t = util::trim(v.get_ref<const std::string&>());
            if (!t.empty()) out.emplace_back(t);
        }
        if (!out.empty()) return out;
    }
    for (const auto& line : util::split(raw, '\n')) {
        auto t = util::trim(line);
        std::size_t k = 0;
        while (k < t.size() && (std::isdigit(static_cast<unsigned char>(t[k])))) ++k;
        if (k > 0 && k < t.size() && (t[k] == '.' || t[k] == ')')) t = util::trim(t.substr(k + 1));
        else if (t.starts_with("- ") || t.starts_with("* ")) t = util::trim(t.substr(2));
        else if (t.starts_with("•")) t = util::trim(t.substr(std::string_view("•").size()));
        else if (k == 0 && line.find(':') != std::string::npos) continue;  // preamble like "Here are the intents:"
        if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
        if (std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isalnum(c); })) out.emplace_back(t);
    }
    if (out.empty()) throw ParseError("no intents found in response");
    return out;
}

class RefinementError : public Error {
public:
    using Error::Error;
};

/// Completes the item-refinement prompt over the item's raw fields and stores
/// the result in item.refined_features.
inline std::string refine_item_features(Gateway& gateway, ItemRecord& item, std::string_view domain,
                                        double temperature = 0.0) {
    if (item.raw_features.empty())
        throw RefinementError("item " + std::to_string(item.item_id) + " has no raw features");
    PromptRequest req{TemplateId::P1, prompts::render_item_refinement(item, domain), temperature,
                      gateway.model_id};
    auto text = gateway.complete(req);
    const auto t = util::trim(text);
    if (t.empty()) throw RefinementError("empty refinement for item " + std::to_string(item.item_id));
    item.refined_features = std::string(t);
    return *item.refined_features;
}

}  // namespace veli4sbr
