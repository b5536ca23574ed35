// Command-line driver: synth, refine, stage1, train, eval, recommend over one run directory.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <map>
#include <string>

#include "veli4sbr/pipeline.hpp"

using namespace veli4sbr;

namespace {

std::string dashed(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intent-guided session recommendation: stage-1 intent validation and stage-2 training"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string run_dir = "run";
    std::string config_file;
    app.add_option("--run-dir", run_dir, "Run directory")->capture_default_str();
    app.add_option("--config", config_file, "Flat key=value config file");

    // Every config key is also a --key flag.
    pipeline::RunConfig defaults;
    std::map<std::string, std::string> flag_values;
    for (auto& [key, field] : defaults.fields()) {
        app.add_option("--" + dashed(key), flag_values[key], "default " + config::format_value(field));
    }

    bool force = false, resume = false;
    std::size_t max_sessions = 0, sampled = 0;
    int k = 10;
    std::vector<ItemId> items;
    std::int64_t session_id = -1;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted intents");
    synth->add_flag("--force", force, "Overwrite a non-empty run directory");
    app.add_subcommand("refine", "Refine item descriptions through the LLM gateway");
    auto* stage1 = app.add_subcommand("stage1", "Build the intent pool and run the predict-and-correct loop");
    stage1->add_flag("--resume", resume, "Continue an interrupted run");
    stage1->add_option("--max-sessions", max_sessions, "Stop after this many new sessions (0 = all)");
    app.add_subcommand("train", "Train the intent-guided recommender");
    auto* eval = app.add_subcommand("eval", "Evaluate the checkpoint on the test split");
    eval->add_option("--sampled-candidates", sampled, "Rank among this many candidates instead of the full catalog");
    auto* rec = app.add_subcommand("recommend", "Top-k items and active intents for a session");
    rec->add_option("--k", k, "Number of items")->capture_default_str();
    rec->add_option("--items", items, "Item ids of the session, in order")->delimiter(',');
    rec->add_option("--session-id", session_id, "Use the prefix of this stored session");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and friends exit 0; usage errors share the configuration-error code.
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const auto& [key, val] : flag_values)
            if (app.count("--" + dashed(key)) > 0) overrides.emplace_back(key, val);
        const pipeline::RunDir run(run_dir);
        const auto* cmd = app.get_subcommands().front();
        const auto name = cmd->get_name();
        const auto cfg = pipeline::resolve_config(name == "synth" ? nullptr : &run, config_file, overrides);

        if (name == "synth") {
            pipeline::cmd_synth(run, cfg, force, std::cout);
        } else if (name == "refine") {
            pipeline::cmd_refine(run, cfg, std::cout);
        } else if (name == "stage1") {
            pipeline::cmd_stage1(run, cfg, resume, std::cout, max_sessions);
        } else if (name == "train") {
            pipeline::cmd_train(run, cfg, std::cout);
        } else if (name == "eval") {
            pipeline::cmd_eval(run, cfg, std::cout, sampled);
        } else if (name == "recommend") {
            if (session_id >= 0) {
                const auto corpus = pipeline::load_corpus(run);
                const auto it = std::find_if(corpus.sessions.begin(), corpus.sessions.end(),
                                             [&](const Session& s) { return s.session_id == session_id; });
                if (it == corpus.sessions.end()) throw DataError("unknown session " + std::to_string(session_id));
                items = it->prefix();
            }
            pipeline::cmd_recommend(run, items, k, cfg, std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
