#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "veli4sbr/gateway.hpp"
#include "veli4sbr/hashing.hpp"

namespace veli4sbr {

class FrozenPoolError : public Error {
public:
    using Error::Error;
};

/// Trims and collapses internal whitespace runs; casing is kept.
inline std::string normalize_intent(std::string_view raw) {
    std::string out;
    bool pending_space = false;
    for (const char c : util::trim(raw)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = true;
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += c;
    }
    if (out.empty()) throw DataError("intent is empty after trimming");
    return out;
}

/// Comparison key: normalized and case-folded.
inline std::string canonicalize(std::string_view raw) {
    auto s = normalize_intent(raw);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

namespace detail {
inline std::string loose_key(std::string_view canonical) {
    std::string s;
    for (const char c : canonical)
        if (std::isalnum(static_cast<unsigned char>(c))) s += c;
    return s;
}
}  // namespace detail

/// The global intent pool: append-only, deduplicated by canonical key, with
/// dense ids 0..size-1 that are never reassigned.
class IntentPool {
public:
    struct AddResult {
        int id;
        bool was_new;
    };

    std::size_t size() const { return intents_.size(); }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    /// Number of entries that came from the initial domain prompt.
    std::size_t seed_count() const { return seed_count_; }
    void mark_seeded() { seed_count_ = intents_.size(); }

    const std::vector<std::string>& intents() const { return intents_; }
    const std::string& at(int id) const { return intents_.at(static_cast<std::size_t>(id)); }

    std::optional<int> find(std::string_view raw) const {
        const auto it = index_.find(canonicalize(raw));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    AddResult add_intent(std::string_view raw) {
        if (frozen_) throw FrozenPoolError("intent pool is frozen; cannot add '" + std::string(raw) + "'");
        const auto key = canonicalize(raw);
        if (const auto it = index_.find(key); it != index_.end()) return {it->second, false};
        const int id = static_cast<int>(intents_.size());
        const auto loose = detail::loose_key(key);
        for (std::size_t i = 0; i < intents_.size(); ++i)
            if (detail::loose_key(canonicalize(intents_[i])) == loose)
                near_duplicates_.emplace_back(intents_[i], normalize_intent(raw));
        intents_.push_back(normalize_intent(raw));
        index_.emplace(key, id);
        return {id, true};
    }

    /// Pairs (existing, added) that differ only in punctuation or spacing. Kept for audit, never merged.
    const std::vector<std::pair<std::string, std::string>>& near_duplicates() const { return near_duplicates_; }

    /// Pool file: one `id<TAB>display_string` line per entry, ids strictly increasing.
    std::string serialize() const {
        std::string out;
        for (std::size_t i = 0; i < intents_.size(); ++i) out += std::to_string(i) + "\t" + intents_[i] + "\n";
        return out;
    }

    std::string content_hash() const { return hashing::sha256_hex(serialize()); }

    static IntentPool parse(std::string_view text) {
        IntentPool pool;
        std::size_t line_no = 0;
        for (const auto& line : util::split(text, '\n')) {
            ++line_no;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw DataError("pool line " + std::to_string(line_no) + ": malformed");
            const auto id = util::parse_int(line.substr(0, tab), "intent id");
            if (id != static_cast<std::int64_t>(pool.size()))
                throw DataError("pool line " + std::to_string(line_no) + ": ids must be dense and increasing");
            if (!pool.add_intent(line.substr(tab + 1)).was_new)
                throw DataError("pool line " + std::to_string(line_no) + ": duplicate intent");
        }
        return pool;
    }

    std::string serialize_meta() const {
        return "seed_count=" + std::to_string(seed_count_) + "\nfrozen=" + (frozen_ ? "1" : "0") + "\n";
    }

    void apply_meta(std::string_view text) {
        for (const auto& line : util::split(text, '\n')) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const auto key = line.substr(0, eq);
            const auto val = util::parse_int(line.substr(eq + 1), key);
            if (key == "seed_count") seed_count_ = static_cast<std::size_t>(val);
            else if (key == "frozen") frozen_ = val != 0;
        }
    }

private:
    std::vector<std::string> intents_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::pair<std::string, std::string>> near_duplicates_;
    std::size_t seed_count_ = 0;
    bool frozen_ = false;
};

/// Seeds a pool from the domain prompt.
inline IntentPool init_pool(Gateway& gateway, std::string_view domain, double temperature = 0.0) {
    PromptRequest req{TemplateId::P2, prompts::render_intent_pool(domain), temperature, gateway.model_id};
    const auto text = gateway.complete(req);
    std::vector<std::string> names;
    try {
        names = parse_intent_list(text);
    } catch (const ParseError& e) {
        throw Error(std::string("intent pool initialization failed: ") + e.what());
    }
    IntentPool pool;
    for (const auto& n : names) {
        try {
            pool.add_intent(n);
        } catch (const DataError&) {
        }
    }
    if (pool.size() == 0) throw Error("intent pool initialization produced no intents");
    pool.mark_seeded();
    return pool;
}

}  // namespace veli4sbr
