#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "veli4sbr/data.hpp"
#include "veli4sbr/intent_pool.hpp"
#include "veli4sbr/model.hpp"

namespace veli4sbr {

/// 1 + number of non-excluded items scoring strictly higher than the target,
/// plus equal-scoring items with a smaller id. `ids`, when given, maps index
/// to item id for tie-breaking; otherwise the index itself is used.
inline std::size_t rank_target(std::span<const double> scores, std::size_t target, const std::vector<bool>& excluded = {},
                               std::span<const ItemId> ids = {}) {
    if (target >= scores.size()) throw Error("target index out of range");
    if (!excluded.empty() && excluded[target]) throw Error("target item is excluded from ranking");
    const auto id_of = [&](std::size_t i) { return ids.empty() ? static_cast<ItemId>(i) : ids[i]; };
    const double ts = scores[target];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i == target || (!excluded.empty() && excluded[i])) continue;
        if (scores[i] > ts || (scores[i] == ts && id_of(i) < id_of(target))) ++rank;
    }
    return rank;
}

struct HitNdcg {
    int hit = 0;
    double ndcg = 0.0;
};

inline HitNdcg metrics_at_k(std::size_t rank, std::size_t k) {
    if (rank < 1 || k < 1) throw Error("rank and k must be >= 1");
    if (rank > k) return {};
    return {1, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

/// Area under the ROC curve (Mann-Whitney, ties get half credit). Returns
/// nullopt if either class is empty.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double pos = 0, neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
        for (auto k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum += avg_rank;
        i = j;
    }
    for (const int l : labels) (l ? pos : neg) += 1;
    if (pos == 0 || neg == 0) return std::nullopt;
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct EvalReport {
    std::map<int, double> hr;
    std::map<int, double> ndcg;
    std::size_t n_sessions = 0;
    std::optional<double> intent_auc;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        for (const auto& [k, v] : hr) j["hr@" + std::to_string(k)] = v;
        for (const auto& [k, v] : ndcg) j["ndcg@" + std::to_string(k)] = v;
        j["n_sessions"] = n_sessions;
        if (intent_auc) j["intent_auc"] = *intent_auc;
        else j["intent_auc"] = nullptr;
        return j;
    }

    std::string csv_header() const {
        std::vector<std::string> cols;
        for (const auto& [k, v] : hr) cols.push_back("hr@" + std::to_string(k));
        for (const auto& [k, v] : ndcg) cols.push_back("ndcg@" + std::to_string(k));
        cols.emplace_back("n_sessions");
        cols.emplace_back("intent_auc");
        return util::join(cols, ",");
    }

    std::string csv_row() const {
        std::vector<std::string> cols;
        char buf[32];
        for (const auto& m : {hr, ndcg})
            for (const auto& [k, v] : m) {
                std::snprintf(buf, sizeof buf, "%.6f", v);
                cols.emplace_back(buf);
            }
        cols.push_back(std::to_string(n_sessions));
        if (intent_auc) {
            std::snprintf(buf, sizeof buf, "%.6f", *intent_auc);
            cols.emplace_back(buf);
        } else {
            cols.emplace_back("");
        }
        return util::join(cols, ",");
    }
};

struct EvalOptions {
    std::vector<int> cutoffs{5, 10, 20};
    bool exclude_prefix = true;
    /// 0 ranks over the full catalog; otherwise over the target plus (n-1) sampled non-session items.
    std::size_t sampled_candidates = 0;
    std::uint64_t seed = 0;
};

/// Planted-intent labels aligned with pool ids, for the synthetic intent-recovery score.
struct IntentTruth {
    const GroundTruth* truth = nullptr;
    const IntentPool* pool = nullptr;

    /// pool id -> planted name index, or -1 when the pool entry is not a planted intent.
    std::vector<int> pool_to_planted() const {
        std::vector<int> out;
        for (const auto& name : pool->intents()) {
            int match = -1;
            const auto key = canonicalize(name);
            for (std::size_t p = 0; p < truth->intent_names.size(); ++p)
                if (canonicalize(truth->intent_names[p]) == key) match = static_cast<int>(p);
            out.push_back(match);
        }
        return out;
    }

    /// Whether pool entry `pool_id` is one of the session's planted intents.
    bool label(SessionId sid, std::size_t pool_id) const {
        const auto it = truth->session_intents.find(sid);
        if (it == truth->session_intents.end()) return false;
        const auto key = canonicalize(pool->at(static_cast<int>(pool_id)));
        for (const auto& n : it->second)
            if (canonicalize(n) == key) return true;
        return false;
    }
};

/// AUC of per-session intent scores (rows aligned with `sessions`, columns with pool ids)
/// against planted labels, restricted to pool entries that are planted intents.
inline std::optional<double> intent_auc(const Mat& scores, const std::vector<const Session*>& sessions, const IntentTruth& it) {
    const auto map = it.pool_to_planted();
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t r = 0; r < sessions.size(); ++r)
        for (std::size_t c = 0; c < map.size() && c < static_cast<std::size_t>(scores.cols()); ++c) {
            if (map[c] < 0) continue;
            s.push_back(scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
            l.push_back(it.label(sessions[r]->session_id, c) ? 1 : 0);
        }
    return roc_auc(s, l);
}

template <SessionEncoder Encoder>
EvalReport evaluate(const ModelState<Encoder>& state, const std::vector<Session>& sessions, const Catalog& catalog,
                    const EvalOptions& opt = {}, const std::optional<IntentTruth>& truth = std::nullopt) {
    if (sessions.empty()) throw Error("evaluation needs at least one session");
    IntentGuidedModel<Encoder> model;
    const auto proj = project_intents(state);
    std::vector<ItemId> ids(catalog.size());
    for (std::size_t i = 0; i < catalog.size(); ++i) ids[i] = catalog.by_index(i).item_id;

    EvalReport report;
    for (const int k : opt.cutoffs) {
        report.hr[k] = 0.0;
        report.ndcg[k] = 0.0;
    }
    Mat y_all(static_cast<Eigen::Index>(sessions.size()), static_cast<Eigen::Index>(state.n_intents()));
    std::vector<const Session*> rows;
    std::vector<bool> excluded(catalog.size(), false);
    std::vector<double> scores(catalog.size());
    std::mt19937_64 rng(opt.seed);

    for (std::size_t si = 0; si < sessions.size(); ++si) {
        const auto& s = sessions[si];
        std::vector<std::size_t> prefix;
        for (const auto id : s.prefix()) prefix.push_back(catalog.index_of(id));
        const auto target = catalog.index_of(s.target());
        const auto f = model.forward(state, proj, prefix);
        const Vec sc = IntentGuidedModel<Encoder>::score_items(state, f.h_tilde);
        std::copy(sc.data(), sc.data() + sc.size(), scores.begin());
        if (state.n_intents() > 0) y_all.row(static_cast<Eigen::Index>(si)) = f.y_hat.transpose();
        rows.push_back(&s);

        std::fill(excluded.begin(), excluded.end(), false);
        if (opt.exclude_prefix)
            for (const auto i : prefix) excluded[i] = true;
        excluded[target] = false;
        if (opt.sampled_candidates > 0) {
            std::vector<std::size_t> pool;
            for (std::size_t i = 0; i < catalog.size(); ++i)
                if (i != target && !excluded[i]) pool.push_back(i);
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(std::min(pool.size(), opt.sampled_candidates - 1));
            std::fill(excluded.begin(), excluded.end(), true);
            excluded[target] = false;
            for (const auto i : pool) excluded[i] = false;
        }
        const auto rank = rank_target(scores, target, excluded, ids);
        for (const int k : opt.cutoffs) {
            const auto m = metrics_at_k(rank, static_cast<std::size_t>(k));
            report.hr[k] += m.hit;
            report.ndcg[k] += m.ndcg;
        }
    }
    const auto n = static_cast<double>(sessions.size());
    for (auto& [k, v] : report.hr) v /= n;
    for (auto& [k, v] : report.ndcg) v /= n;
    report.n_sessions = sessions.size();
    if (truth && truth->truth && truth->pool && state.n_intents() > 0) report.intent_auc = intent_auc(y_all, rows, *truth);
    return report;
}

}  // namespace veli4sbr
