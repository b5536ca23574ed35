#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "veli4sbr/data.hpp"
#include "veli4sbr/gateway.hpp"
#include "veli4sbr/intent_pool.hpp"
#include "veli4sbr/prompts.hpp"

namespace veli4sbr {

struct ValidationTask {
    SessionId session_id = 0;
    std::vector<ItemId> prefix;
    ItemId held_out = 0;
    std::vector<ItemId> distractors;
    /// held_out plus distractors, shuffled.
    std::vector<ItemId> candidates;
};

/// Builds the held-out item prediction task for one session: the last item is
/// held out and `m` out-of-session distractors are drawn. `popularity`, when
/// non-empty, holds one sampling weight per catalog index.
inline ValidationTask build_validation_task(const Session& session, const Catalog& catalog, int m,
                                            std::uint64_t seed, const std::vector<double>& popularity = {}) {
    if (session.items.size() < 2) throw DataError("session " + std::to_string(session.session_id) + " too short");
    if (m < 0) throw ConfigError("m must be non-negative");
    const std::set<ItemId> in_session(session.items.begin(), session.items.end());
    std::vector<ItemId> outside;
    std::vector<double> weights;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        const auto id = catalog.by_index(i).item_id;
        if (in_session.contains(id)) continue;
        outside.push_back(id);
        if (!popularity.empty()) weights.push_back(popularity.at(i));
    }
    if (outside.size() < static_cast<std::size_t>(m))
        throw DataError("catalog has only " + std::to_string(outside.size()) + " items outside session " +
                        std::to_string(session.session_id) + ", need " + std::to_string(m));

    ValidationTask task;
    task.session_id = session.session_id;
    task.prefix = session.prefix();
    task.held_out = session.target();
    std::mt19937_64 rng(util::hash_combine(seed, static_cast<std::uint64_t>(session.session_id)));
    if (popularity.empty()) {
        for (int k = 0; k < m; ++k) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), outside.size() - 1);
            std::swap(outside[static_cast<std::size_t>(k)], outside[pick(rng)]);
        }
        task.distractors.assign(outside.begin(), outside.begin() + m);
    } else {
        for (int k = 0; k < m; ++k) {
            std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
            const auto j = pick(rng);
            task.distractors.push_back(outside[j]);
            weights[j] = 0.0;
        }
    }
    task.candidates = task.distractors;
    task.candidates.push_back(task.held_out);
    std::shuffle(task.candidates.begin(), task.candidates.end(), rng);
    return task;
}

struct TrialRecord {
    int trial = 0;
    bool parsed = false;
    std::vector<std::string> intents;
    ItemId predicted = -1;
    bool correct = false;
    std::string feedback;
};

struct IntentAnnotation {
    SessionId session_id = 0;
    std::vector<int> intents;
    bool accepted = false;
    int trials_used = 0;
    std::vector<ItemId> mispredicted_items;
    /// Set when the backend failed persistently; such annotations are not stored and get retried on resume.
    bool incomplete = false;
    /// Intent strings of the accepted trial, before pool resolution.
    std::vector<std::string> accepted_intent_names;
    std::vector<TrialRecord> trials;
};

struct PcLoopOptions {
    int t_max = 3;
    std::string domain = "synthetic";
    double temperature = 0.0;
};

/// Runs up to t_max predict-and-correct trials against a read-only pool view.
/// The pool is not modified; see commit_annotation.
inline IntentAnnotation run_pc_trials(const ValidationTask& task, const Catalog& catalog, const IntentPool& pool,
                                      Gateway& gateway, const PcLoopOptions& opt) {
    if (opt.t_max < 1) throw ConfigError("t_max must be >= 1");
    IntentAnnotation ann;
    ann.session_id = task.session_id;

    prompts::PcPromptInput input;
    input.domain = opt.domain;
    input.session_id = task.session_id;
    for (const auto id : task.prefix) input.session_items.push_back(&catalog.at(id));
    for (const auto id : task.candidates) input.candidates.push_back(&catalog.at(id));
    input.pool = pool.intents();

    for (int t = 1; t <= opt.t_max; ++t) {
        PromptRequest req{TemplateId::P3, prompts::render_predict_correct(input), opt.temperature, gateway.model_id};
        std::string raw;
        try {
            raw = gateway.complete(req);
        } catch (const TransportError&) {
            ann.incomplete = true;
            ann.trials_used = t - 1;
            ann.mispredicted_items.clear();
            return ann;
        }
        ann.trials_used = t;
        TrialRecord rec;
        rec.trial = t;
        try {
            const auto resp = parse_pc_response(raw);
            rec.parsed = true;
            rec.intents = resp.intents;
            rec.predicted = resp.next_item;
            if (resp.next_item == task.held_out) {
                rec.correct = true;
                ann.trials.push_back(rec);
                ann.accepted = true;
                ann.accepted_intent_names = resp.intents;
                return ann;
            }
            if (std::find(task.candidates.begin(), task.candidates.end(), resp.next_item) != task.candidates.end() &&
                std::find(ann.mispredicted_items.begin(), ann.mispredicted_items.end(), resp.next_item) ==
                    ann.mispredicted_items.end())
                ann.mispredicted_items.push_back(resp.next_item);
            rec.feedback = prompts::wrong_prediction_feedback(resp.next_item, resp.intents);
        } catch (const ParseError&) {
            rec.feedback = std::string(prompts::kInvalidFormatFeedback);
        }
        input.feedback.push_back(rec.feedback);
        ann.trials.push_back(std::move(rec));
    }
    return ann;
}

/// Resolves accepted intent names to pool ids, appending new ones. Only
/// accepted annotations ever reach the pool.
inline void commit_annotation(IntentAnnotation& ann, IntentPool& pool) {
    ann.intents.clear();
    if (!ann.accepted) return;
    for (const auto& name : ann.accepted_intent_names) {
        int id;
        if (const auto existing = pool.find(name)) id = *existing;
        else id = pool.add_intent(name).id;
        if (std::find(ann.intents.begin(), ann.intents.end(), id) == ann.intents.end()) ann.intents.push_back(id);
    }
}

inline IntentAnnotation run_pc_loop(const ValidationTask& task, const Catalog& catalog, IntentPool& pool,
                                    Gateway& gateway, const PcLoopOptions& opt) {
    if (pool.frozen()) throw FrozenPoolError("predict-and-correct requires an unfrozen pool");
    auto ann = run_pc_trials(task, catalog, pool, gateway, opt);
    if (!ann.incomplete) commit_annotation(ann, pool);
    return ann;
}

// ---------------------------------------------------------------------------
// Annotation store

inline std::string serialize_annotation(const IntentAnnotation& a) {
    return std::to_string(a.session_id) + "\t" + (a.accepted ? "1" : "0") + "\t" + std::to_string(a.trials_used) +
           "\t" + util::join(a.intents, ",") + "\t" + util::join(a.mispredicted_items, ",") + "\n";
}

inline std::map<SessionId, IntentAnnotation> parse_annotations(std::string_view text) {
    std::map<SessionId, IntentAnnotation> out;
    const auto lines = util::split(text, '\n');
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const auto& line = lines[n];
        if (line.empty()) continue;
        const auto cols = util::split(line, '\t');
        if (cols.size() != 5) {
            if (n + 1 == lines.size()) continue;  // torn tail from an interrupted run
            throw DataError("annotation line " + std::to_string(n + 1) + ": expected 5 columns");
        }
        IntentAnnotation a;
        a.session_id = util::parse_int(cols[0], "session_id");
        a.accepted = cols[1] == "1";
        a.trials_used = static_cast<int>(util::parse_int(cols[2], "trials"));
        if (!cols[3].empty())
            for (const auto& t : util::split(cols[3], ',')) a.intents.push_back(static_cast<int>(util::parse_int(t, "intent id")));
        if (!cols[4].empty())
            for (const auto& t : util::split(cols[4], ',')) a.mispredicted_items.push_back(util::parse_int(t, "item id"));
        if (a.accepted == a.intents.empty())
            throw DataError("annotation line " + std::to_string(n + 1) + ": accepted flag disagrees with intents");
        out[a.session_id] = std::move(a);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus-wide driver

struct Stage1Options {
    PcLoopOptions loop;
    int m = 5;
    std::uint64_t seed = 1;
    /// Sessions annotated concurrently per wave. Pool additions are committed
    /// in session order after each wave, so results do not depend on it.
    int parallelism = 1;
    /// Stop after this many newly processed sessions (0 = no limit).
    std::size_t max_sessions = 0;
    bool popularity_distractors = false;
};

struct Stage1Paths {
    std::filesystem::path annotations;
    std::filesystem::path pool;
    std::filesystem::path pool_meta;
    std::filesystem::path trial_log;
};

struct Stage1Summary {
    std::size_t sessions = 0;
    std::size_t accepted = 0;
    std::size_t failed = 0;
    std::size_t incomplete = 0;
    std::size_t skipped = 0;
    std::size_t processed = 0;
    std::size_t pool_size = 0;
    std::size_t pool_seed = 0;
    std::map<int, std::size_t> trials_histogram;

    double acceptance_rate() const {
        const auto done = accepted + failed;
        return done == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(done);
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["sessions"] = sessions;
        j["accepted"] = accepted;
        j["failed"] = failed;
        j["incomplete"] = incomplete;
        j["skipped_already_annotated"] = skipped;
        j["processed"] = processed;
        j["acceptance_rate"] = acceptance_rate();
        j["failure_rate"] = accepted + failed == 0 ? 0.0 : 1.0 - acceptance_rate();
        j["pool_size"] = pool_size;
        j["pool_from_domain_prompt"] = pool_seed;
        j["pool_added_by_loop"] = pool_size - pool_seed;
        nlohmann::ordered_json hist = nlohmann::ordered_json::object();
        for (const auto& [t, c] : trials_histogram) hist[std::to_string(t)] = c;
        j["accepted_trials_histogram"] = hist;
        return j;
    }
};

struct Stage1Result {
    std::map<SessionId, IntentAnnotation> annotations;
    Stage1Summary summary;
};

/// Annotates every training session. With paths set, annotations, pool and a
/// per-trial log are persisted incrementally; sessions already present in
/// `existing` are skipped.
inline Stage1Result run_stage1(const std::vector<Session>& sessions, const Catalog& catalog, IntentPool& pool,
                               Gateway& gateway, const Stage1Options& opt,
                               std::map<SessionId, IntentAnnotation> existing = {},
                               const std::optional<Stage1Paths>& paths = std::nullopt) {
    for (const auto& s : sessions)
        if (s.split != Split::Train)
            throw DataError("refusing to annotate " + to_string(s.split) + " session " + std::to_string(s.session_id));
    if (pool.frozen()) throw FrozenPoolError("stage 1 requires an unfrozen pool");

    std::vector<double> popularity;
    if (opt.popularity_distractors) {
        popularity.assign(catalog.size(), 1.0);
        for (const auto& s : sessions)
            for (const auto id : s.items) popularity[catalog.index_of(id)] += 1.0;
    }

    Stage1Result result;
    result.annotations = std::move(existing);
    std::vector<const Session*> pending;
    for (const auto& s : sessions) {
        if (result.annotations.contains(s.session_id)) ++result.summary.skipped;
        else pending.push_back(&s);
    }
    if (opt.max_sessions > 0 && pending.size() > opt.max_sessions) pending.resize(opt.max_sessions);

    std::ofstream ann_out, log_out;
    if (paths) {
        ann_out.open(paths->annotations, std::ios::app);
        log_out.open(paths->trial_log, std::ios::app);
        if (!ann_out || !log_out) throw DataError("cannot open stage-1 output files");
    }
    const auto persist_pool = [&] {
        if (!paths) return;
        util::write_file(paths->pool.string(), pool.serialize());
        util::write_file(paths->pool_meta.string(), pool.serialize_meta());
    };
    persist_pool();

    const std::size_t wave = static_cast<std::size_t>(std::max(1, opt.parallelism));
    for (std::size_t begin = 0; begin < pending.size(); begin += wave) {
        const auto end = std::min(pending.size(), begin + wave);
        std::vector<IntentAnnotation> outcomes(end - begin);
        if (wave == 1) {
            const auto task = build_validation_task(*pending[begin], catalog, opt.m, opt.seed, popularity);
            outcomes[0] = run_pc_trials(task, catalog, pool, gateway, opt.loop);
        } else {
            std::vector<std::future<IntentAnnotation>> futures;
            for (auto i = begin; i < end; ++i)
                futures.push_back(std::async(std::launch::async, [&, i] {
                    const auto task = build_validation_task(*pending[i], catalog, opt.m, opt.seed, popularity);
                    return run_pc_trials(task, catalog, pool, gateway, opt.loop);
                }));
            for (std::size_t k = 0; k < futures.size(); ++k) outcomes[k] = futures[k].get();
        }
        for (auto& ann : outcomes) {
            const auto pool_before = pool.size();
            ++result.summary.processed;
            if (ann.incomplete) {
                ++result.summary.incomplete;
                continue;
            }
            commit_annotation(ann, pool);
            if (paths) {
                for (const auto& t : ann.trials) {
                    nlohmann::ordered_json j;
                    j["session_id"] = ann.session_id;
                    j["trial"] = t.trial;
                    j["parsed"] = t.parsed;
                    j["intents"] = t.intents;
                    j["next_item"] = t.predicted;
                    j["correct"] = t.correct;
                    log_out << j.dump() << '\n';
                }
                log_out.flush();
            }
            if (pool.size() != pool_before) persist_pool();
            if (paths) {
                ann_out << serialize_annotation(ann);
                ann_out.flush();
                if (!ann_out) throw DataError("annotation write failed");
            }
            result.annotations[ann.session_id] = std::move(ann);
        }
    }

    for (const auto& s : sessions) {
        const auto it = result.annotations.find(s.session_id);
        if (it == result.annotations.end()) continue;
        ++result.summary.sessions;
        if (it->second.accepted) {
            ++result.summary.accepted;
            ++result.summary.trials_histogram[it->second.trials_used];
        } else {
            ++result.summary.failed;
        }
    }
    result.summary.pool_size = pool.size();
    result.summary.pool_seed = pool.seed_count();
    return result;
}

}  // namespace veli4sbr
