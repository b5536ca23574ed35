#include "support.hpp"

#include <algorithm>
#include <numeric>

#include "veli4sbr/evaluation.hpp"

using namespace veli4sbr;

namespace {

// Rank by full sort: descending score, ties by ascending id.
std::size_t brute_force_rank(const std::vector<double>& scores, std::size_t target, const std::vector<bool>& excluded) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (!excluded[i] || i == target) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

}  // namespace

TEST(RankTarget, Examples) {
    const std::vector<double> unique_max{0.1, 0.9, 0.3};
    EXPECT_EQ(rank_target(unique_max, 1), 1u);

    const std::vector<double> tie_above{0.8, 0.8, 0.5, 0.1};
    EXPECT_EQ(rank_target(tie_above, 2), 3u);

    const std::vector<double> flat(6, 0.25);
    std::vector<bool> excluded(6, false);
    excluded[0] = excluded[1] = true;
    EXPECT_EQ(rank_target(flat, 2, excluded), 1u);
    EXPECT_EQ(rank_target(flat, 4, excluded), 3u);
}

TEST(RankTarget, ExcludedTargetThrows) {
    const std::vector<double> s{1, 2, 3};
    EXPECT_THROW(rank_target(s, 1, {false, true, false}), Error);
    EXPECT_THROW(rank_target(s, 3), Error);
}

TEST(RankTarget, TiesUseItemIdsWhenGiven) {
    const std::vector<double> flat(3, 0.0);
    const std::vector<ItemId> ids{30, 10, 20};
    EXPECT_EQ(rank_target(flat, 1, {}, ids), 1u);
    EXPECT_EQ(rank_target(flat, 0, {}, ids), 3u);
}

TEST(RankTarget, AgreesWithSortOracle) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> coarse(0, 6);  // many ties
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng() % 30;
        std::vector<double> scores(n);
        for (auto& v : scores) v = coarse(rng) * 0.5;
        std::vector<bool> excluded(n);
        for (std::size_t i = 0; i < n; ++i) excluded[i] = rng() % 4 == 0;
        const std::size_t target = rng() % n;
        excluded[target] = false;
        EXPECT_EQ(rank_target(scores, target, excluded), brute_force_rank(scores, target, excluded));
    }
}

TEST(Metrics, Examples) {
    auto m = metrics_at_k(1, 5);
    EXPECT_EQ(m.hit, 1);
    EXPECT_DOUBLE_EQ(m.ndcg, 1.0);
    m = metrics_at_k(2, 10);
    EXPECT_EQ(m.hit, 1);
    EXPECT_NEAR(m.ndcg, 0.6309297535714575, 1e-12);
    m = metrics_at_k(6, 5);
    EXPECT_EQ(m.hit, 0);
    EXPECT_EQ(m.ndcg, 0.0);
    EXPECT_THROW(metrics_at_k(0, 5), Error);
}

TEST(RocAuc, MatchesPairCountingOracle) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 40;
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse(rng);
            l[i] = static_cast<int>(rng() % 2);
        }
        double wins = 0, pairs = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (l[i] == 1 && l[j] == 0) {
                    pairs += 1;
                    wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
                }
        const auto auc = roc_auc(s, l);
        if (pairs == 0) {
            EXPECT_FALSE(auc.has_value());
        } else {
            ASSERT_TRUE(auc.has_value());
            EXPECT_NEAR(*auc, wins / pairs, 1e-12);
        }
    }
}

TEST(Evaluate, EmptySessionListThrows) {
    auto corpus = generate_synthetic({.n_intents = 2, .n_items = 20, .n_sessions = 5});
    const auto state = init_model(corpus.catalog.size(), 2, 8, 1);
    EXPECT_THROW(evaluate(state, {}, corpus.catalog), Error);
}

TEST(Evaluate, PerfectModelScoresOne) {
    auto corpus = generate_synthetic({.n_intents = 2, .n_items = 20, .n_sessions = 4, .min_length = 3, .max_length = 3});
    auto state = init_model(corpus.catalog.size(), 0, 4, 1);
    state.use_fusion = false;
    // One session; zero every row outside its prefix and point the target along h.
    const auto& s = corpus.sessions[0];
    std::vector<std::size_t> prefix;
    for (const auto id : s.prefix()) prefix.push_back(corpus.catalog.index_of(id));
    const Vec h = IntentGuidedModel<GruEncoder>().encode_session(state, prefix);
    for (std::size_t i = 0; i < corpus.catalog.size(); ++i)
        if (std::find(prefix.begin(), prefix.end(), i) == prefix.end())
            state.item_embeddings.row(static_cast<Eigen::Index>(i)).setZero();
    state.item_embeddings.row(static_cast<Eigen::Index>(corpus.catalog.index_of(s.target()))) = h.transpose();

    const auto rep = evaluate(state, std::vector<Session>{s}, corpus.catalog);
    for (const auto& [k, v] : rep.hr) EXPECT_EQ(v, 1.0) << "hr@" << k;
    for (const auto& [k, v] : rep.ndcg) EXPECT_EQ(v, 1.0) << "ndcg@" << k;
}

TEST(Evaluate, UntrainedModelIsAtChanceLevel) {
    auto corpus = generate_synthetic({.n_sessions = 500, .seed = 21});
    const auto state = init_model(corpus.catalog.size(), 0, 16, 5);
    EvalOptions opt;
    const auto rep = evaluate(state, corpus.sessions, corpus.catalog, opt);
    ASSERT_EQ(rep.n_sessions, 500u);
    for (const int k : opt.cutoffs) {
        // Per-session hit probability k / (catalog minus excluded prefix).
        double mean = 0, var = 0;
        for (const auto& s : corpus.sessions) {
            const double p = static_cast<double>(k) / static_cast<double>(corpus.catalog.size() - s.prefix().size());
            mean += p;
            var += p * (1 - p);
        }
        mean /= 500.0;
        const double sd = std::sqrt(var) / 500.0;
        EXPECT_NEAR(rep.hr.at(k), mean, 3 * sd) << "hr@" << k;
    }
}

TEST(Evaluate, MetricsAreMonotoneInKAndBounded) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto corpus = generate_synthetic({.n_items = 80, .n_sessions = 60, .seed = seed});
        const auto state = init_model(corpus.catalog.size(), 3, 8, seed);
        for (const std::size_t sampled : {std::size_t{0}, std::size_t{20}}) {
            EvalOptions opt;
            opt.sampled_candidates = sampled;
            const auto rep = evaluate(state, corpus.sessions, corpus.catalog, opt);
            EXPECT_LE(rep.hr.at(5), rep.hr.at(10));
            EXPECT_LE(rep.hr.at(10), rep.hr.at(20));
            EXPECT_LE(rep.ndcg.at(5), rep.ndcg.at(10));
            EXPECT_LE(rep.ndcg.at(10), rep.ndcg.at(20));
            for (const int k : opt.cutoffs) {
                EXPECT_LE(rep.ndcg.at(k), rep.hr.at(k));
                EXPECT_GE(rep.ndcg.at(k), 0.0);
                EXPECT_LE(rep.hr.at(k), 1.0);
            }
            if (sampled == 20) {
                EXPECT_EQ(rep.hr.at(20), 1.0);
            }
        }
    }
}

TEST(Evaluate, IsDeterministic) {
    auto corpus = generate_synthetic({.n_items = 80, .n_sessions = 40});
    const auto state = init_model(corpus.catalog.size(), 3, 8, 2);
    EvalOptions opt;
    opt.sampled_candidates = 10;
    const auto a = evaluate(state, corpus.sessions, corpus.catalog, opt);
    const auto b = evaluate(state, corpus.sessions, corpus.catalog, opt);
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
    EXPECT_EQ(a.csv_row(), b.csv_row());
}

TEST(IntentAuc, PerfectScoresGiveOne) {
    GroundTruth truth;
    truth.intent_names = {"Alpha", "Beta"};
    truth.session_intents = {{1, {"Alpha"}}, {2, {"Beta"}}, {3, {"Alpha", "Beta"}}};
    IntentPool pool;
    pool.add_intent("alpha");
    pool.add_intent("Beta");
    pool.add_intent("Unplanted");
    std::vector<Session> sessions{{1, {0, 1}}, {2, {0, 1}}, {3, {0, 1}}};
    std::vector<const Session*> rows{&sessions[0], &sessions[1], &sessions[2]};
    Mat scores(3, 3);
    scores << 0.9, 0.1, 0.99,  //
        0.2, 0.8, 0.99,        //
        0.7, 0.6, 0.0;
    const auto auc = intent_auc(scores, rows, {&truth, &pool});
    ASSERT_TRUE(auc.has_value());
    EXPECT_DOUBLE_EQ(*auc, 1.0);  // the unplanted column is ignored
}
