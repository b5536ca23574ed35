#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "veli4sbr/common.hpp"
#include "veli4sbr/data.hpp"
#include "veli4sbr/hashing.hpp"

namespace veli4sbr::prompts {

enum class TemplateId { P1, P2, P3 };

inline std::string to_string(TemplateId t) {
    switch (t) {
        case TemplateId::P1: return "P1";
        case TemplateId::P2: return "P2";
        case TemplateId::P3: return "P3";
    }
    return "P1";
}

// Template assets. `<data_name>` is substituted with the dataset domain and
// `<attributes>` with the item's raw fields as a JSON object.
inline constexpr std::string_view kItemRefinement =
    "Given the item attributes: <attributes>, internally reason step by step and extract "
    "fact‑based, distinctive semantic features for this <data_name> item without any "
    "hallucinations.";

inline constexpr std::string_view kIntentPool =
    "Given the <data_name> e‑commerce context, generate a minimal list of unique, conceptually "
    "distinct intents—ranging from general (e.g., “budget‑friendly”, "
    "“trendy”, “popular”) to domain‑specific intents.";

inline constexpr std::string_view kPredictCorrect =
    "You are a session-based recommender for <data_name> e‑commerce.\n"
    "Given session information, the Global Intent Pool (GIP), candidate items, and past feedback "
    "(previous failures), your task is twofold:\n"
    "\n"
    "1. Infer one or more intents from the current session using the GIP. Reuse exact GIP entries; "
    "only create new intents if none fit.\n"
    "2. Recommend the best next item from the candidate list, considering both your inferred "
    "intents and past feedback.\n"
    "\n"
    "Output exactly: {\"intents\": [\"intent1\", …],\"next_item\": <item_id>,\"reason\": "
    "\"brief explanation\"}";

inline std::string_view template_text(TemplateId t) {
    switch (t) {
        case TemplateId::P1: return kItemRefinement;
        case TemplateId::P2: return kIntentPool;
        case TemplateId::P3: return kPredictCorrect;
    }
    return kItemRefinement;
}

/// Short content hash of a template; part of every cache key so that editing
/// a template invalidates its cached responses.
inline const std::string& template_hash(TemplateId t) {
    static const std::string h1 = hashing::sha256_hex(kItemRefinement).substr(0, 16);
    static const std::string h2 = hashing::sha256_hex(kIntentPool).substr(0, 16);
    static const std::string h3 = hashing::sha256_hex(kPredictCorrect).substr(0, 16);
    switch (t) {
        case TemplateId::P1: return h1;
        case TemplateId::P2: return h2;
        case TemplateId::P3: return h3;
    }
    return h1;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

inline std::string attributes_json(const ItemRecord& item) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : item.raw_features) j[k] = v;
    return j.dump();
}

inline std::string render_item_refinement(const ItemRecord& item, std::string_view domain) {
    auto s = replace_all(std::string(kItemRefinement), "<attributes>", attributes_json(item));
    return replace_all(std::move(s), "<data_name>", domain);
}

inline std::string render_intent_pool(std::string_view domain) {
    return replace_all(std::string(kIntentPool), "<data_name>", domain);
}

/// Text shown for an item inside the predict-and-correct prompt: the refined
/// block when available, otherwise the raw fields joined.
inline std::string item_text(const ItemRecord& item) {
    if (item.refined_features && !util::trim(*item.refined_features).empty()) {
        std::string t = *item.refined_features;
        std::replace(t.begin(), t.end(), '\n', ' ');
        return t;
    }
    std::vector<std::string> parts;
    for (const auto& [k, v] : item.raw_features) parts.push_back(k + ": " + v);
    return util::join(parts, " | ");
}

inline std::string intent_list_text(const std::vector<std::string>& intents) {
    return "[" + util::join(intents, ", ") + "]";
}

inline std::string wrong_prediction_feedback(ItemId predicted, const std::vector<std::string>& intents) {
    return "The prediction " + std::to_string(predicted) + " is incorrect. Refine intents " +
           intent_list_text(intents) + " and retry.";
}

inline constexpr std::string_view kInvalidFormatFeedback =
    "Your previous answer was not valid JSON; follow the output format exactly.";

struct PcPromptInput {
    std::string_view domain;
    SessionId session_id = 0;
    std::vector<const ItemRecord*> session_items;
    std::vector<const ItemRecord*> candidates;
    std::vector<std::string> pool;
    std::vector<std::string> feedback;
};

inline std::string render_predict_correct(const PcPromptInput& in) {
    std::string out = replace_all(std::string(kPredictCorrect), "<data_name>", in.domain);
    out += "\n\nGlobal Intent Pool (GIP): ";
    out += nlohmann::json(in.pool).dump();
    out += "\n\nSession " + std::to_string(in.session_id) + " (Item id & metadata):\n";
    for (const auto* item : in.session_items) out += std::to_string(item->item_id) + ": " + item_text(*item) + "\n";
    out += "\nCandidate items:\n";
    for (const auto* item : in.candidates) out += std::to_string(item->item_id) + ": " + item_text(*item) + "\n";
    if (!in.feedback.empty()) {
        out += "\nPast feedback:\n";
        for (const auto& f : in.feedback) out += "- " + f + "\n";
    }
    return out;
}

}  // namespace veli4sbr::prompts
