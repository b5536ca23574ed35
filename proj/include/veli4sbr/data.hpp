#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "veli4sbr/common.hpp"

namespace veli4sbr {

struct ItemRecord {
    ItemId item_id = 0;
    /// Ordered (field, value) pairs; order follows the declared schema.
    std::vector<std::pair<std::string, std::string>> raw_features;
    std::optional<std::string> refined_features;

    const std::string* field(std::string_view name) const {
        for (const auto& [k, v] : raw_features)
            if (k == name) return &v;
        return nullptr;
    }
};

/// Item records plus a dense index (0..size-1) used by the model.
class Catalog {
public:
    Catalog() = default;

    void add(ItemRecord item) {
        if (index_.contains(item.item_id))
            throw DataError("duplicate item_id " + std::to_string(item.item_id));
        index_.emplace(item.item_id, items_.size());
        items_.push_back(std::move(item));
    }

    std::size_t size() const { return items_.size(); }
    bool contains(ItemId id) const { return index_.contains(id); }

    std::size_t index_of(ItemId id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) throw DataError("unknown item_id " + std::to_string(id));
        return it->second;
    }

    const ItemRecord& at(ItemId id) const { return items_[index_of(id)]; }
    ItemRecord& at(ItemId id) { return items_[index_of(id)]; }
    const ItemRecord& by_index(std::size_t i) const { return items_[i]; }
    const std::vector<ItemRecord>& items() const { return items_; }
    std::vector<ItemRecord>& items() { return items_; }

private:
    std::vector<ItemRecord> items_;
    std::unordered_map<ItemId, std::size_t> index_;
};

enum class Split { Train, Valid, Test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "train";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + std::string(s) + "'");
}

struct Session {
    SessionId session_id = 0;
    std::vector<ItemId> items;
    Split split = Split::Train;

    std::vector<ItemId> prefix() const { return {items.begin(), items.end() - 1}; }
    ItemId target() const { return items.back(); }
};

/// Per-dataset manifest: domain name used in prompts and the declared feature fields.
struct DatasetManifest {
    std::string domain = "synthetic";
    std::vector<std::string> fields;

    std::string serialize() const {
        return "domain=" + domain + "\nfields=" + util::join(fields, ",") + "\n";
    }

    static DatasetManifest parse(std::string_view text) {
        DatasetManifest m;
        m.fields.clear();
        std::size_t n = 0;
        for (const auto& line : util::split(text, '\n')) {
            ++n;
            const auto t = util::trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw DataError("manifest line " + std::to_string(n) + ": expected key=value");
            const auto key = util::trim(t.substr(0, eq));
            const auto val = util::trim(t.substr(eq + 1));
            if (key == "domain") {
                m.domain = std::string(val);
            } else if (key == "fields") {
                for (const auto& f : util::split(val, ','))
                    if (!util::trim(f).empty()) m.fields.emplace_back(util::trim(f));
            } else {
                throw DataError("manifest line " + std::to_string(n) + ": unknown key '" +
                                std::string(key) + "'");
            }
        }
        return m;
    }
};

namespace detail {

inline std::string sanitize_field(std::string_view v) {
    std::string out(v);
    std::replace_if(out.begin(), out.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Catalog / sessions files

inline std::string serialize_catalog(const Catalog& catalog) {
    std::string out;
    for (const auto& item : catalog.items()) {
        out += std::to_string(item.item_id);
        for (const auto& [k, v] : item.raw_features) {
            out += '\t';
            out += k;
            out += '=';
            out += detail::sanitize_field(v);
        }
        out += '\n';
    }
    return out;
}

inline Catalog parse_catalog(std::string_view text, const DatasetManifest* manifest = nullptr) {
    Catalog catalog;
    std::size_t line_no = 0;
    for (const auto& raw : util::split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (util::trim(line).empty()) continue;
        const auto cols = util::split(line, '\t');
        ItemRecord rec;
        try {
            rec.item_id = util::parse_int(cols[0], "item_id");
        } catch (const DataError& e) {
            throw DataError("catalog line " + std::to_string(line_no) + ": " + e.what());
        }
        if (rec.item_id < 0)
            throw DataError("catalog line " + std::to_string(line_no) + ": negative item_id");
        for (std::size_t c = 1; c < cols.size(); ++c) {
            const auto eq = cols[c].find('=');
            if (eq == std::string::npos || eq == 0)
                throw DataError("catalog line " + std::to_string(line_no) + ": field '" + cols[c] +
                                "' is not field=value");
            std::string key = cols[c].substr(0, eq);
            if (manifest && std::find(manifest->fields.begin(), manifest->fields.end(), key) ==
                                manifest->fields.end())
                throw DataError("catalog line " + std::to_string(line_no) + ": field '" + key +
                                "' not in declared schema");
            rec.raw_features.emplace_back(std::move(key), cols[c].substr(eq + 1));
        }
        try {
            catalog.add(std::move(rec));
        } catch (const DataError& e) {
            throw DataError("catalog line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return catalog;
}

inline std::string serialize_sessions(const std::vector<Session>& sessions) {
    std::string out;
    for (const auto& s : sessions) {
        out += std::to_string(s.session_id);
        out += '\t';
        out += util::join(s.items, ",");
        out += '\n';
    }
    return out;
}

inline std::vector<Session> parse_sessions(std::string_view text) {
    std::vector<Session> sessions;
    std::set<SessionId> seen;
    std::size_t line_no = 0;
    for (const auto& raw : util::split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (util::trim(line).empty()) continue;
        const auto cols = util::split(line, '\t');
        if (cols.size() != 2)
            throw DataError("sessions line " + std::to_string(line_no) +
                            ": expected session_id<TAB>item,item,...");
        Session s;
        try {
            s.session_id = util::parse_int(cols[0], "session_id");
            for (const auto& tok : util::split(cols[1], ','))
                s.items.push_back(util::parse_int(tok, "item_id"));
        } catch (const DataError& e) {
            throw DataError("sessions line " + std::to_string(line_no) + ": " + e.what());
        }
        if (s.items.size() < 2)
            throw DataError("sessions line " + std::to_string(line_no) + ": session " +
                            std::to_string(s.session_id) + " has fewer than 2 items");
        if (!seen.insert(s.session_id).second)
            throw DataError("sessions line " + std::to_string(line_no) + ": duplicate session " +
                            std::to_string(s.session_id));
        sessions.push_back(std::move(s));
    }
    return sessions;
}

inline void check_referential_integrity(const Catalog& catalog, const std::vector<Session>& sessions) {
    for (const auto& s : sessions)
        for (const auto id : s.items)
            if (!catalog.contains(id))
                throw DataError("session " + std::to_string(s.session_id) + " references unknown item_id " +
                                std::to_string(id));
}

struct Dataset {
    Catalog catalog;
    std::vector<Session> sessions;
};

inline Dataset load_dataset(const std::filesystem::path& catalog_path,
                            const std::filesystem::path& sessions_path,
                            const DatasetManifest* manifest = nullptr) {
    Dataset ds;
    ds.catalog = parse_catalog(util::read_file(catalog_path.string()), manifest);
    ds.sessions = parse_sessions(util::read_file(sessions_path.string()));
    check_referential_integrity(ds.catalog, ds.sessions);
    return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
    double train = 0.8;
    double valid = 0.1;
    double test = 0.1;
};

enum class SplitMode { Random, Chronological };

/// Assigns every session to exactly one split. Counts are round(n*train),
/// round(n*valid) and the remainder. Chronological mode orders by session_id.
inline std::vector<Session> split_sessions(std::vector<Session> sessions, SplitRatios ratios,
                                           std::uint64_t seed, SplitMode mode = SplitMode::Random) {
    if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
        throw ConfigError("split ratios must be non-negative and sum to 1");
    const std::size_t n = sessions.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (mode == SplitMode::Random) {
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
    } else {
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
            return sessions[a].session_id < sessions[b].session_id;
        });
    }
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.train));
    const auto n_valid = std::min(n - std::min(n, n_train),
                                  static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.valid)));
    for (std::size_t r = 0; r < n; ++r) {
        auto& s = sessions[order[r]];
        s.split = r < n_train ? Split::Train : (r < n_train + n_valid ? Split::Valid : Split::Test);
    }
    return sessions;
}

inline std::string serialize_splits(const std::vector<Session>& sessions) {
    std::string out;
    for (const auto& s : sessions) out += std::to_string(s.session_id) + "\t" + to_string(s.split) + "\n";
    return out;
}

inline void apply_splits(std::vector<Session>& sessions, std::string_view text) {
    std::unordered_map<SessionId, Split> m;
    std::size_t line_no = 0;
    for (const auto& line : util::split(text, '\n')) {
        ++line_no;
        if (util::trim(line).empty()) continue;
        const auto cols = util::split(line, '\t');
        if (cols.size() != 2) throw DataError("splits line " + std::to_string(line_no) + ": malformed");
        m[util::parse_int(cols[0], "session_id")] = parse_split(util::trim(cols[1]));
    }
    for (auto& s : sessions) {
        const auto it = m.find(s.session_id);
        if (it == m.end()) throw DataError("no split recorded for session " + std::to_string(s.session_id));
        s.split = it->second;
    }
}

inline std::vector<Session> filter_split(const std::vector<Session>& sessions, Split split) {
    std::vector<Session> out;
    for (const auto& s : sessions)
        if (s.split == split) out.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus with planted intents

struct SyntheticSpec {
    int n_intents = 8;
    int n_items = 400;
    int n_sessions = 2000;
    /// 0 derives n_items / n_intents (balanced assignment); otherwise n_intents*items_per_intent must equal n_items.
    int items_per_intent = 0;
    int intents_per_session = 2;
    int min_length = 3;
    int max_length = 8;
    double noise_rate = 0.1;
    std::uint64_t seed = 1;
};

struct GroundTruth {
    std::vector<std::string> intent_names;
    std::map<SessionId, std::vector<std::string>> session_intents;
    std::map<ItemId, std::string> item_cluster;

    std::string serialize_sessions() const {
        std::string out;
        for (const auto& [sid, names] : session_intents) out += std::to_string(sid) + "\t" + util::join(names, ";") + "\n";
        return out;
    }

    std::string serialize_items() const {
        std::string out;
        for (const auto& [iid, name] : item_cluster) out += std::to_string(iid) + "\t" + name + "\n";
        return out;
    }

    static GroundTruth parse(std::string_view sessions_text, std::string_view items_text) {
        GroundTruth gt;
        std::set<std::string> names;
        for (const auto& line : util::split(sessions_text, '\n')) {
            if (util::trim(line).empty()) continue;
            const auto cols = util::split(line, '\t');
            if (cols.size() != 2) throw DataError("ground-truth session line malformed: " + line);
            auto& v = gt.session_intents[util::parse_int(cols[0], "session_id")];
            for (const auto& n : util::split(cols[1], ';')) {
                v.emplace_back(util::trim(n));
                names.insert(v.back());
            }
        }
        for (const auto& line : util::split(items_text, '\n')) {
            if (util::trim(line).empty()) continue;
            const auto cols = util::split(line, '\t');
            if (cols.size() != 2) throw DataError("ground-truth item line malformed: " + line);
            gt.item_cluster[util::parse_int(cols[0], "item_id")] = std::string(util::trim(cols[1]));
            names.insert(std::string(util::trim(cols[1])));
        }
        gt.intent_names.assign(names.begin(), names.end());
        return gt;
    }
};

inline std::string planted_intent_name(int c) {
    static const char* const words[] = {"Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot",
                                        "Golf", "Hotel", "India", "Juliett", "Kilo", "Lima"};
    std::string name = std::string("Latent ") + words[c % 12] + " Interest";
    if (c >= 12) name += " " + std::to_string(c / 12);
    return name;
}

struct SyntheticCorpus {
    Catalog catalog;
    std::vector<Session> sessions;
    GroundTruth truth;
    DatasetManifest manifest;
};

inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_sessions <= 0) throw ConfigError("n_sessions must be positive");
    if (spec.n_intents <= 0 || spec.n_items < spec.n_intents)
        throw ConfigError("need n_items >= n_intents >= 1");
    if (spec.items_per_intent != 0 && spec.items_per_intent * spec.n_intents != spec.n_items)
        throw ConfigError("items_per_intent * n_intents must equal n_items");
    if (spec.intents_per_session < 1 || spec.intents_per_session > spec.n_intents)
        throw ConfigError("intents_per_session must be in [1, n_intents]");
    if (!(spec.noise_rate >= 0.0 && spec.noise_rate <= 1.0)) throw ConfigError("noise_rate must be in [0,1]");
    if (spec.min_length < 2 || spec.max_length < spec.min_length || spec.max_length > spec.n_items)
        throw ConfigError("session length range must satisfy 2 <= min <= max <= n_items");

    std::mt19937_64 rng(spec.seed);
    SyntheticCorpus out;
    out.manifest.domain = "synthetic";
    out.manifest.fields = {"title", "categories"};
    for (int c = 0; c < spec.n_intents; ++c) out.truth.intent_names.push_back(planted_intent_name(c));

    std::vector<int> perm(spec.n_items);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> cluster_of(spec.n_items);
    std::vector<std::vector<ItemId>> members(spec.n_intents);
    for (int r = 0; r < spec.n_items; ++r) cluster_of[perm[r]] = r % spec.n_intents;
    for (int i = 0; i < spec.n_items; ++i) {
        const int c = cluster_of[i];
        members[c].push_back(i);
        ItemRecord rec;
        rec.item_id = i;
        rec.raw_features = {{"title", "Product " + std::to_string(i)},
                            {"categories", out.truth.intent_names[c]}};
        out.catalog.add(std::move(rec));
        out.truth.item_cluster[i] = out.truth.intent_names[c];
    }

    std::uniform_int_distribution<int> n_int_dist(1, spec.intents_per_session);
    std::uniform_int_distribution<int> len_dist(spec.min_length, spec.max_length);
    std::uniform_int_distribution<int> any_item(0, spec.n_items - 1);
    std::bernoulli_distribution noise(spec.noise_rate);
    std::vector<int> intent_order(spec.n_intents);
    std::iota(intent_order.begin(), intent_order.end(), 0);

    for (int s = 0; s < spec.n_sessions; ++s) {
        std::shuffle(intent_order.begin(), intent_order.end(), rng);
        const int k = n_int_dist(rng);
        std::vector<int> chosen(intent_order.begin(), intent_order.begin() + k);
        std::sort(chosen.begin(), chosen.end());
        const int len = len_dist(rng);
        std::set<ItemId> used;
        Session sess;
        sess.session_id = s;
        std::uniform_int_distribution<int> pick_intent(0, k - 1);
        while (static_cast<int>(sess.items.size()) < len) {
            ItemId item;
            if (noise(rng)) {
                item = any_item(rng);
            } else {
                const auto& pool = members[chosen[pick_intent(rng)]];
                std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
                item = pool[pick(rng)];
                // Exhausted cluster: fall through to a uniform draw.
                bool exhausted = true;
                for (const auto m : pool)
                    if (!used.contains(m)) { exhausted = false; break; }
                if (exhausted) item = any_item(rng);
            }
            if (used.insert(item).second) sess.items.push_back(item);
        }
        auto& names = out.truth.session_intents[s];
        for (const int c : chosen) names.push_back(out.truth.intent_names[c]);
        out.sessions.push_back(std::move(sess));
    }
    return out;
}

}  // namespace veli4sbr
