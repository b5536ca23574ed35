#pragma once

#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "veli4sbr/checkpoint.hpp"
#include "veli4sbr/config.hpp"
#include "veli4sbr/data.hpp"
#include "veli4sbr/evaluation.hpp"
#include "veli4sbr/gateway.hpp"
#include "veli4sbr/http_backend.hpp"
#include "veli4sbr/intent_pool.hpp"
#include "veli4sbr/mock_oracle.hpp"
#include "veli4sbr/pc_loop.hpp"
#include "veli4sbr/training.hpp"

namespace veli4sbr::pipeline {

namespace fs = std::filesystem;

struct Stage1Settings {
    std::string backend = "mock";
    double failure_rate = 0.4;
    int t_max = 3;
    int m = 5;
    int parallelism = 1;
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    double temperature = 0.0;
    /// Intents the mock lists for the domain prompt; -1 = half the planted set.
    int mock_seed_pool = -1;
    bool popularity_distractors = false;
};

/// Every tunable of a run. The single `seed` drives corpus, splits, stage 1 and training.
struct RunConfig {
    SyntheticSpec synth;
    SplitRatios split;
    Stage1Settings stage1;
    TrainConfig train;

    std::map<std::string, ConfigField> fields() {
        auto f = train.fields();
        f.insert({{"n_intents", &synth.n_intents},
                  {"n_items", &synth.n_items},
                  {"n_sessions", &synth.n_sessions},
                  {"items_per_intent", &synth.items_per_intent},
                  {"intents_per_session", &synth.intents_per_session},
                  {"min_length", &synth.min_length},
                  {"max_length", &synth.max_length},
                  {"noise_rate", &synth.noise_rate},
                  {"split_train", &split.train},
                  {"split_valid", &split.valid},
                  {"split_test", &split.test},
                  {"backend", &stage1.backend},
                  {"failure_rate", &stage1.failure_rate},
                  {"t_max", &stage1.t_max},
                  {"m", &stage1.m},
                  {"parallelism", &stage1.parallelism},
                  {"endpoint", &stage1.endpoint},
                  {"model", &stage1.model},
                  {"temperature", &stage1.temperature},
                  {"mock_seed_pool", &stage1.mock_seed_pool},
                  {"popularity_distractors", &stage1.popularity_distractors}});
        return f;
    }

    std::uint64_t seed() const { return train.seed; }

    SyntheticSpec synth_spec() const {
        auto s = synth;
        s.seed = seed();
        return s;
    }
};

/// Paths of every artifact inside one run directory.
class RunDir {
public:
    explicit RunDir(fs::path root) : root_(std::move(root)) {}

    const fs::path& root() const { return root_; }
    fs::path config() const { return root_ / "config.txt"; }
    fs::path manifest() const { return root_ / "manifest.txt"; }
    fs::path catalog() const { return root_ / "catalog.tsv"; }
    fs::path sessions() const { return root_ / "sessions.tsv"; }
    fs::path splits() const { return root_ / "splits.tsv"; }
    fs::path truth_sessions() const { return root_ / "truth_sessions.tsv"; }
    fs::path truth_items() const { return root_ / "truth_items.tsv"; }
    fs::path refined() const { return root_ / "refined.tsv"; }
    fs::path cache() const { return root_ / "cache.tsv"; }
    fs::path pool() const { return root_ / "pool.tsv"; }
    fs::path pool_meta() const { return root_ / "pool.meta"; }
    fs::path annotations() const { return root_ / "annotations.tsv"; }
    fs::path stage1_log() const { return root_ / "stage1_log.jsonl"; }
    fs::path stage1_summary() const { return root_ / "stage1_summary.json"; }
    fs::path train_config() const { return root_ / "train_config.txt"; }
    fs::path checkpoint() const { return root_ / "checkpoint.bin"; }
    fs::path history() const { return root_ / "history.csv"; }
    fs::path train_summary() const { return root_ / "train_summary.json"; }
    fs::path report_json() const { return root_ / "report.json"; }
    fs::path report_csv() const { return root_ / "report.csv"; }

private:
    fs::path root_;
};

/// Defaults, then the run's config snapshot (if any), then an optional extra file, then flag overrides.
inline RunConfig resolve_config(const RunDir* run, const std::string& config_file,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (run && fs::exists(run->config())) config::apply(cfg, config::parse_key_values(util::read_file(run->config().string())));
    if (!config_file.empty()) config::apply(cfg, config::parse_key_values(util::read_file(config_file)));
    config::apply(cfg, overrides);
    return cfg;
}

struct Corpus {
    Catalog catalog;
    std::vector<Session> sessions;
    DatasetManifest manifest;
    std::optional<GroundTruth> truth;

    std::vector<Session> split(Split s) const { return filter_split(sessions, s); }
};

inline Corpus load_corpus(const RunDir& run) {
    if (!fs::exists(run.catalog()) || !fs::exists(run.sessions()))
        throw DataError("no corpus in " + run.root().string() + "; run `synth` first");
    Corpus c;
    c.manifest = DatasetManifest::parse(util::read_file(run.manifest().string()));
    auto ds = load_dataset(run.catalog(), run.sessions(), &c.manifest);
    c.catalog = std::move(ds.catalog);
    c.sessions = std::move(ds.sessions);
    apply_splits(c.sessions, util::read_file(run.splits().string()));
    if (fs::exists(run.truth_sessions()))
        c.truth = GroundTruth::parse(util::read_file(run.truth_sessions().string()), util::read_file(run.truth_items().string()));
    if (fs::exists(run.refined()))
        for (const auto& line : util::split(util::read_file(run.refined().string()), '\n')) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw DataError("refined.tsv: malformed line");
            c.catalog.at(util::parse_int(line.substr(0, tab), "item_id")).refined_features =
                hashing::base64_decode(line.substr(tab + 1));
        }
    return c;
}

/// Writes a fresh synthetic corpus. A non-empty directory requires `force`,
/// which clears it first.
inline SyntheticCorpus cmd_synth(const RunDir& run, RunConfig cfg, bool force, std::ostream& out) {
    const auto corpus = generate_synthetic(cfg.synth_spec());
    auto sessions = split_sessions(corpus.sessions, cfg.split, cfg.seed());
    if (fs::exists(run.root()) && !fs::is_empty(run.root())) {
        if (!force) throw ConfigError(run.root().string() + " is not empty; pass --force to overwrite");
        fs::remove_all(run.root());
    }
    fs::create_directories(run.root());
    util::write_file(run.config().string(), config::serialize(cfg));
    util::write_file(run.manifest().string(), corpus.manifest.serialize());
    util::write_file(run.catalog().string(), serialize_catalog(corpus.catalog));
    util::write_file(run.sessions().string(), serialize_sessions(sessions));
    util::write_file(run.splits().string(), serialize_splits(sessions));
    util::write_file(run.truth_sessions().string(), corpus.truth.serialize_sessions());
    util::write_file(run.truth_items().string(), corpus.truth.serialize_items());
    out << "synth: " << corpus.catalog.size() << " items, " << sessions.size() << " sessions ("
        << filter_split(sessions, Split::Train).size() << " train / " << filter_split(sessions, Split::Valid).size()
        << " valid / " << filter_split(sessions, Split::Test).size() << " test) -> " << run.root().string() << "\n";
    return corpus;
}

inline std::shared_ptr<Backend> make_backend(const RunConfig& cfg, const Corpus& corpus) {
    const auto& s = cfg.stage1;
    if (s.backend == "mock") {
        if (!corpus.truth) throw ConfigError("mock backend needs the planted ground truth of a synthetic run");
        return std::make_shared<MockOracle>(*corpus.truth, MockOracle::held_out_of(corpus.sessions), s.failure_rate,
                                            cfg.seed(), s.mock_seed_pool);
    }
    if (s.backend == "http") return std::make_shared<HttpBackend>(s.endpoint, HttpBackend::api_key_from_env());
    throw ConfigError("unknown backend '" + s.backend + "' (expected mock or http)");
}

inline std::unique_ptr<Gateway> make_gateway(const RunConfig& cfg, const Corpus& corpus, const RunDir& run) {
    auto gw = std::make_unique<Gateway>(make_backend(cfg, corpus), std::make_shared<CacheStore>(run.cache()));
    gw->model_id = cfg.stage1.backend == "mock" ? "mock" : cfg.stage1.model;
    return gw;
}

/// Refines every catalog item not yet refined and appends the results to refined.tsv.
inline std::size_t refine_catalog(Corpus& corpus, Gateway& gw, const RunDir& run, double temperature) {
    std::ofstream out(run.refined(), std::ios::app | std::ios::binary);
    std::size_t n = 0;
    for (auto& item : corpus.catalog.items()) {
        if (item.refined_features) continue;
        refine_item_features(gw, item, corpus.manifest.domain, temperature);
        out << item.item_id << '\t' << hashing::base64_encode(*item.refined_features) << '\n';
        ++n;
    }
    out.flush();
    if (!out) throw DataError("cannot write " + run.refined().string());
    return n;
}

inline std::size_t cmd_refine(const RunDir& run, const RunConfig& cfg, std::ostream& out) {
    auto corpus = load_corpus(run);
    auto gw = make_gateway(cfg, corpus, run);
    const auto n = refine_catalog(corpus, *gw, run, cfg.stage1.temperature);
    const auto st = gw->stats();
    out << "refine: " << n << " items refined (" << st.backend_calls << " backend calls, " << st.cache_hits
        << " cache hits)\n";
    return n;
}

inline void print_stage1_summary(const Stage1Summary& s, const GatewayStats& g, std::ostream& out) {
    out << std::fixed << std::setprecision(1);
    out << "stage1: " << s.sessions << " train sessions annotated, acceptance " << 100.0 * s.acceptance_rate()
        << "% (" << s.accepted << " accepted, " << s.failed << " failed";
    if (s.incomplete) out << ", " << s.incomplete << " incomplete";
    out << ")\n";
    out << "  pool: " << s.pool_size << " intents (" << s.pool_seed << " from domain prompt, "
        << s.pool_size - s.pool_seed << " added by the loop)\n";
    out << "  accepted at trial:";
    for (const auto& [t, c] : s.trials_histogram) out << " " << t << "=" << c;
    out << "\n  llm: " << g.backend_calls << " backend calls, " << g.cache_hits << " cache hits\n";
    out.unsetf(std::ios::floatfield);
}

/// Refine, seed the pool, run the loop over the train split, freeze the pool
/// once every train session has an annotation.
inline Stage1Summary cmd_stage1(const RunDir& run, const RunConfig& cfg, bool resume, std::ostream& out,
                                std::size_t max_sessions = 0) {
    auto corpus = load_corpus(run);
    const bool started = fs::exists(run.pool()) || fs::exists(run.annotations());
    if (started && !resume) throw ConfigError("stage 1 already started in " + run.root().string() + "; pass --resume");
    auto gw = make_gateway(cfg, corpus, run);

    refine_catalog(corpus, *gw, run, cfg.stage1.temperature);

    IntentPool pool;
    std::map<SessionId, IntentAnnotation> existing;
    if (fs::exists(run.pool())) {
        pool = IntentPool::parse(util::read_file(run.pool().string()));
        if (fs::exists(run.pool_meta())) pool.apply_meta(util::read_file(run.pool_meta().string()));
    } else {
        pool = init_pool(*gw, corpus.manifest.domain, cfg.stage1.temperature);
    }
    if (fs::exists(run.annotations())) existing = parse_annotations(util::read_file(run.annotations().string()));

    const auto train = corpus.split(Split::Train);
    Stage1Result res;
    if (pool.frozen()) {
        res.annotations = std::move(existing);
        for (const auto& s : train) {
            const auto it = res.annotations.find(s.session_id);
            if (it == res.annotations.end()) continue;
            ++res.summary.sessions;
            if (it->second.accepted) {
                ++res.summary.accepted;
                ++res.summary.trials_histogram[it->second.trials_used];
            } else {
                ++res.summary.failed;
            }
        }
        res.summary.skipped = res.summary.sessions;
        res.summary.pool_size = pool.size();
        res.summary.pool_seed = pool.seed_count();
        out << "stage1: already complete (pool frozen)\n";
    } else {
        Stage1Options opt;
        opt.loop.t_max = cfg.stage1.t_max;
        opt.loop.domain = corpus.manifest.domain;
        opt.loop.temperature = cfg.stage1.temperature;
        opt.m = cfg.stage1.m;
        opt.seed = cfg.seed();
        opt.parallelism = cfg.stage1.parallelism;
        opt.max_sessions = max_sessions;
        opt.popularity_distractors = cfg.stage1.popularity_distractors;
        Stage1Paths paths{run.annotations(), run.pool(), run.pool_meta(), run.stage1_log()};
        res = run_stage1(train, corpus.catalog, pool, *gw, opt, std::move(existing), paths);
        std::size_t covered = 0;
        for (const auto& s : train) covered += res.annotations.contains(s.session_id);
        if (covered == train.size()) {
            pool.freeze();
            util::write_file(run.pool_meta().string(), pool.serialize_meta());
        } else {
            out << "stage1: " << train.size() - covered << " sessions still unannotated; rerun with --resume\n";
        }
    }
    auto j = res.summary.to_json();
    j["pool_frozen"] = pool.frozen();
    const auto st = gw->stats();
    j["backend_calls"] = st.backend_calls;
    j["cache_hits"] = st.cache_hits;
    util::write_file(run.stage1_summary().string(), j.dump(2) + "\n");
    print_stage1_summary(res.summary, st, out);
    return res.summary;
}

/// Pool for training/inference: the stage-1 pool (must be frozen), or an empty
/// one when stage 1 never ran.
inline IntentPool load_frozen_pool(const RunDir& run) {
    IntentPool pool;
    if (!fs::exists(run.pool())) return pool;
    pool = IntentPool::parse(util::read_file(run.pool().string()));
    if (fs::exists(run.pool_meta())) pool.apply_meta(util::read_file(run.pool_meta().string()));
    if (!pool.frozen()) throw ConfigError("intent pool is not frozen; finish stage 1 (stage1 --resume) first");
    return pool;
}

/// `extra.on_enrich` sees every enrichment; `extra.on_epoch` runs after the printed line.
inline FitResult cmd_train(const RunDir& run, const RunConfig& cfg, std::ostream& out, const FitHooks& extra = {}) {
    cfg.train.validate();
    const auto corpus = load_corpus(run);
    const auto pool = load_frozen_pool(run);
    std::map<SessionId, IntentAnnotation> annotations;
    if (fs::exists(run.annotations())) annotations = parse_annotations(util::read_file(run.annotations().string()));
    if (pool.size() == 0 && cfg.train.intent_fraction > 0)
        throw ConfigError("no stage-1 artifacts; run stage1 or train with --intent-fraction 0");

    auto state = init_model(corpus.catalog.size(), pool.size(), static_cast<std::size_t>(cfg.train.d), cfg.seed());
    FitHooks hooks;
    hooks.on_epoch = [&](const EpochStats& e) {
        out << "epoch " << e.epoch << "  rec " << e.loss_rec << "  intent " << e.loss_intent << "  decouple "
            << e.loss_decouple << "  valid hr@10 " << e.valid_hr10 << "  ndcg@10 " << e.valid_ndcg10 << "\n";
        if (extra.on_epoch) extra.on_epoch(e);
    };
    hooks.on_enrich = extra.on_enrich;
    auto tc = cfg;
    auto res = fit(state, corpus.split(Split::Train), corpus.split(Split::Valid), annotations, corpus.catalog, cfg.train, hooks);
    util::write_file(run.train_config().string(), config::serialize(tc));
    util::write_file(run.history().string(), history_csv(res.history));
    save_checkpoint(run.checkpoint().string(), state, pool.content_hash(), config::serialize(tc));
    nlohmann::ordered_json j;
    j["best_epoch"] = res.best_epoch;
    j["best_valid_ndcg10"] = res.best_valid_ndcg10;
    j["epochs_run"] = res.history.size();
    j["enrichments"] = res.enrichments;
    j["intent_module"] = res.intent_module;
    util::write_file(run.train_summary().string(), j.dump(2) + "\n");
    out << "train: best epoch " << res.best_epoch << " (valid ndcg@10 " << res.best_valid_ndcg10 << "), checkpoint -> "
        << run.checkpoint().string() << "\n";
    return res;
}

inline LoadedCheckpoint<GruEncoder> load_run_checkpoint(const RunDir& run, const IntentPool& pool) {
    if (!fs::exists(run.checkpoint())) throw DataError("no checkpoint in " + run.root().string() + "; run `train` first");
    return load_checkpoint<GruEncoder>(run.checkpoint().string(), pool.content_hash());
}

inline EvalReport cmd_eval(const RunDir& run, const RunConfig& cfg, std::ostream& out, std::size_t sampled_candidates = 0) {
    const auto corpus = load_corpus(run);
    const auto pool = load_frozen_pool(run);
    const auto ck = load_run_checkpoint(run, pool);
    EvalOptions opt;
    opt.exclude_prefix = cfg.train.exclude_prefix;
    opt.sampled_candidates = sampled_candidates;
    opt.seed = cfg.seed();
    std::optional<IntentTruth> truth;
    if (corpus.truth && pool.size() > 0) truth = IntentTruth{&*corpus.truth, &pool};
    const auto report = evaluate(ck.state, corpus.split(Split::Test), corpus.catalog, opt, truth);
    util::write_file(run.report_json().string(), report.to_json().dump(2) + "\n");
    util::write_file(run.report_csv().string(), report.csv_header() + "\n" + report.csv_row() + "\n");
    out << report.to_json().dump(2) << "\n";
    return report;
}

/// Top-k for an explicit item sequence, printed with the intents that pass the filter.
inline Recommendation cmd_recommend(const RunDir& run, const std::vector<ItemId>& items, int k, const RunConfig& cfg,
                                    std::ostream& out) {
    if (items.empty()) throw ConfigError("recommend needs at least one item");
    const auto corpus = load_corpus(run);
    const auto pool = load_frozen_pool(run);
    const auto ck = load_run_checkpoint(run, pool);
    std::vector<std::size_t> prefix;
    for (const auto id : items) prefix.push_back(corpus.catalog.index_of(id));
    const auto rec = recommend(ck.state, prefix, static_cast<std::size_t>(std::max(k, 0)), cfg.train.exclude_prefix);
    out << "top-" << k << ":\n";
    for (const auto& [idx, score] : rec.items) {
        const auto& item = corpus.catalog.by_index(idx);
        out << "  " << item.item_id << "\t" << score << "\t" << prompts::item_text(item) << "\n";
    }
    out << "intents:";
    if (rec.intents.empty()) out << " (none above threshold)";
    out << "\n";
    for (const auto& [c, p] : rec.intents) out << "  " << pool.at(static_cast<int>(c)) << "\t" << p << "\n";
    return rec;
}

}  // namespace veli4sbr::pipeline
