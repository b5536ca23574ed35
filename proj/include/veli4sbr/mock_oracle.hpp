#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "veli4sbr/gateway.hpp"

namespace veli4sbr {

/// Intent-generation failure rates observed for GPT-3.5-turbo and
/// LLaMA-3.3-70B-Instruct on Beauty / Yelp / Book.
namespace failure_presets {
inline constexpr double kGpt35Beauty = 0.397;
inline constexpr double kGpt35Yelp = 0.552;
inline constexpr double kGpt35Book = 0.817;
inline constexpr double kLlamaBeauty = 0.080;
inline constexpr double kLlamaYelp = 0.390;
inline constexpr double kLlamaBook = 0.148;
}  // namespace failure_presets

/// Deterministic offline stand-in for an LLM, answering from planted ground truth.
///
/// P1 echoes the item's fields as `field: value | ...`. P2 lists the first
/// `seed_pool_size` planted intents (default: half, rounded up) so the rest
/// must be discovered through validated trials. P3 answers a session with its
/// planted intents and true held-out item, unless the session is marked as a
/// failure (a `failure_rate` share of sessions), in which case every trial gets
/// plausible-but-wrong intents and a wrong candidate. All decisions are pure
/// functions of (session_id, trial, seed).
class MockOracle : public Backend {
public:
    MockOracle(GroundTruth truth, std::map<SessionId, ItemId> held_out, double failure_rate, std::uint64_t seed,
               int seed_pool_size = -1)
        : truth_(std::move(truth)), held_out_(std::move(held_out)), failure_rate_(failure_rate), seed_(seed),
          seed_pool_size_(seed_pool_size) {
        if (!(failure_rate_ >= 0.0 && failure_rate_ <= 1.0)) throw ConfigError("failure_rate must be in [0,1]");
    }

    static std::map<SessionId, ItemId> held_out_of(const std::vector<Session>& sessions) {
        std::map<SessionId, ItemId> m;
        for (const auto& s : sessions) m[s.session_id] = s.target();
        return m;
    }

    /// Golden-ratio sequence over session ids with a seeded offset: any run of
    /// consecutive ids fails at close to exactly `failure_rate`.
    bool session_fails(SessionId sid) const {
        const double offset = util::unit_interval(util::hash_combine(seed_ ^ 0x5eed, 0));
        double whole;
        const double u = std::modf(offset + 0.6180339887498949 * static_cast<double>(sid), &whole);
        return (u < 0 ? u + 1 : u) < failure_rate_;
    }

    std::string complete(const PromptRequest& request) override {
        switch (request.template_id) {
            case TemplateId::P1: return answer_refinement(request.rendered_text);
            case TemplateId::P2: return answer_pool();
            case TemplateId::P3: return answer_predict(request.rendered_text);
        }
        return {};
    }

private:
    std::string answer_refinement(const std::string& text) const {
        const auto start = text.find('{');
        const auto end = start == std::string::npos ? start : detail::match_brackets(text, start);
        if (end == std::string::npos) throw ParseError("mock: no attributes object in P1 prompt");
        const auto j = nlohmann::ordered_json::parse(text.substr(start, end - start + 1), nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParseError("mock: bad attributes object in P1 prompt");
        std::vector<std::string> parts;
        for (const auto& [k, v] : j.items()) {
            std::string val = v.is_string() ? v.get<std::string>() : v.dump();
            std::string collapsed;
            bool space = false;
            for (const char c : util::trim(val)) {
                if (std::isspace(static_cast<unsigned char>(c))) {
                    space = true;
                    continue;
                }
                if (space && !collapsed.empty()) collapsed += ' ';
                space = false;
                collapsed += c;
            }
            parts.push_back(k + ": " + collapsed);
        }
        return util::join(parts, " | ");
    }

    std::string answer_pool() const {
        const auto n = truth_.intent_names.size();
        const auto k = seed_pool_size_ >= 0 ? std::min<std::size_t>(n, static_cast<std::size_t>(seed_pool_size_))
                                            : (n + 1) / 2;
        std::vector<std::string> names(truth_.intent_names.begin(), truth_.intent_names.begin() + static_cast<long>(k));
        return nlohmann::json(names).dump();
    }

    std::string answer_predict(const std::string& text) const {
        static const std::regex session_re(R"(\nSession (-?\d+) \(Item id)");
        std::smatch m;
        if (!std::regex_search(text, m, session_re)) throw Error("mock: no session id in P3 prompt");
        const SessionId sid = std::stoll(m[1].str());
        const auto truth_it = truth_.session_intents.find(sid);
        const auto held_it = held_out_.find(sid);
        if (truth_it == truth_.session_intents.end() || held_it == held_out_.end())
            throw Error("mock: unknown session id " + std::to_string(sid));

        const auto candidates = candidate_ids(text);
        const int trial = 1 + static_cast<int>(count_feedback(text));

        nlohmann::ordered_json out;
        if (!session_fails(sid)) {
            out["intents"] = truth_it->second;
            out["next_item"] = held_it->second;
            out["reason"] = "The session items share these interests.";
            return out.dump();
        }

        const auto h = util::hash_combine(util::hash_combine(seed_, static_cast<std::uint64_t>(sid)),
                                          static_cast<std::uint64_t>(trial));
        std::vector<std::string> wrong;
        for (const auto& name : truth_.intent_names)
            if (std::find(truth_it->second.begin(), truth_it->second.end(), name) == truth_it->second.end())
                wrong.push_back(name);
        std::vector<std::string> intents;
        if (!wrong.empty()) intents.push_back(wrong[h % wrong.size()]);
        intents.push_back("Decoy Interest " + std::to_string((h >> 8) % 5));
        std::vector<ItemId> others;
        for (const auto c : candidates)
            if (c != held_it->second) others.push_back(c);
        const ItemId pick = others.empty() ? held_it->second + 1 : others[(h >> 16) % others.size()];
        out["intents"] = intents;
        out["next_item"] = pick;
        out["reason"] = "Chosen by popularity.";
        return out.dump();
    }

    static std::vector<ItemId> candidate_ids(const std::string& text) {
        std::vector<ItemId> ids;
        const auto start = text.find("\nCandidate items:\n");
        if (start == std::string::npos) return ids;
        std::size_t pos = start + std::string_view("\nCandidate items:\n").size();
        while (pos < text.size() && text[pos] != '\n') {
            const auto eol = text.find('\n', pos);
            const auto line = text.substr(pos, eol - pos);
            const auto colon = line.find(':');
            if (colon != std::string::npos) ids.push_back(std::stoll(line.substr(0, colon)));
            if (eol == std::string::npos) break;
            pos = eol + 1;
        }
        return ids;
    }

    static std::size_t count_feedback(const std::string& text) {
        const auto start = text.find("\nPast feedback:\n");
        if (start == std::string::npos) return 0;
        std::size_t n = 0;
        for (auto pos = text.find("\n- ", start); pos != std::string::npos; pos = text.find("\n- ", pos + 1)) ++n;
        return n;
    }

    GroundTruth truth_;
    std::map<SessionId, ItemId> held_out_;
    double failure_rate_;
    std::uint64_t seed_;
    int seed_pool_size_;
};

/// Replays a fixed list of responses in order and records every request.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::vector<std::string> responses) : responses_(responses.begin(), responses.end()) {}

    std::string complete(const PromptRequest& request) override {
        std::lock_guard lock(mu_);
        requests_.push_back(request);
        if (responses_.empty()) throw Error("scripted backend exhausted");
        auto r = std::move(responses_.front());
        responses_.pop_front();
        return r;
    }

    std::vector<PromptRequest> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }

private:
    mutable std::mutex mu_;
    std::deque<std::string> responses_;
    std::vector<PromptRequest> requests_;
};

}  // namespace veli4sbr
