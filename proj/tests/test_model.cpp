#include "support.hpp"

#include <algorithm>
#include <numeric>

#include "veli4sbr/losses.hpp"
#include "veli4sbr/model.hpp"

using namespace veli4sbr;
using veli4sbr::testing::central_difference;
using veli4sbr::testing::relative_error;

namespace {

using State = ModelState<GruEncoder>;
using Model = IntentGuidedModel<GruEncoder>;

State small_state(std::uint64_t seed, std::size_t items = 12, std::size_t intents = 4, std::size_t d = 6) {
    auto s = init_model(items, intents, d, seed);
    std::mt19937_64 rng(seed + 1);
    // Larger scales than the defaults so intent logits land clearly on both sides of tau.
    nn::uniform_fill(s.item_embeddings, 1.0, rng);
    nn::uniform_fill(s.intent_embeddings, 1.5, rng);
    nn::uniform_fill(s.ln_gamma, 1.0, rng);
    s.ln_gamma.array() += 1.0;
    nn::uniform_fill(s.ln_beta, 0.2, rng);
    for (auto& [name, m] : s.encoder.tensors())
        if (name.find(".b") != std::string::npos) nn::uniform_fill(*m, 0.3, rng);
    return s;
}

struct Objective {
    std::vector<std::size_t> prefix{3, 7, 1, 9};
    std::size_t pos = 5;
    std::size_t negs[2] = {0, 11};
    Vec y;
    double lambda_intent = 0.7;
    double lambda_decouple = 0.3;
    std::uint64_t dropout_seed = 99;

    double value(const State& s) const {
        Model model;
        const auto proj = project_intents(s);
        std::mt19937_64 rng(dropout_seed);
        const auto f = model.forward(s, proj, prefix, &rng);
        return losses::loss_rec(s.item_embeddings, f.h_tilde, pos, negs) +
               lambda_intent * losses::loss_intent_logits(y, f.logits) +
               lambda_decouple * losses::loss_decouple(s.intent_embeddings, nullptr, false);
    }

    State gradient(const State& s) const {
        Model model;
        const auto proj = project_intents(s);
        std::mt19937_64 rng(dropout_seed);
        const auto f = model.forward(s, proj, prefix, &rng);
        State g = s.zeros_like();
        losses::RecLossGrad rg;
        losses::loss_rec(s.item_embeddings, f.h_tilde, pos, negs, &rg);
        for (const auto& [idx, row] : rg.d_items) g.item_embeddings.row(static_cast<Eigen::Index>(idx)) += row.transpose();
        Vec dl;
        losses::loss_intent_logits(y, f.logits, &dl);
        dl *= lambda_intent;
        model.backward(s, proj, f, rg.d_h_tilde, dl, g);
        Mat dE;
        losses::loss_decouple(s.intent_embeddings, &dE, false);
        g.intent_embeddings += lambda_decouple * dE;
        return g;
    }
};

double min_distance_to_tau(const State& s, const std::vector<std::size_t>& prefix) {
    Model model;
    const auto f = model.forward(s, project_intents(s), prefix);
    return (f.y_hat.array() - s.tau).abs().minCoeff();
}

}  // namespace

TEST(ModelGradient, FullObjectiveMatchesCentralDifferences) {
    for (const bool fusion : {true, false}) {
        // Pick a parameter point where no intent sits within 1e-2 of the filter threshold.
        State s;
        Objective obj;
        obj.y = (Vec(4) << 1, 0, 0.3, 1).finished();
        std::uint64_t seed = 1;
        do {
            s = small_state(seed++);
        } while (min_distance_to_tau(s, obj.prefix) < 1e-2);
        s.use_fusion = fusion;
        s.dropout_rate = 0.25;
        {
            Model model;
            const auto f = model.forward(s, project_intents(s), obj.prefix);
            ASSERT_GT((f.y_hat.array() > s.tau).count(), 0) << "point must exercise the fusion path";
        }

        auto grad = obj.gradient(s);
        auto named_grads = grad.tensors();
        auto params = s.tensors();
        std::mt19937_64 rng(7);
        for (std::size_t t = 0; t < params.size(); ++t) {
            Mat& p = *params[t].second;
            const Mat& g = *named_grads[t].second;
            std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
            const int points = std::min<int>(20, static_cast<int>(p.size()));
            for (int k = 0; k < points; ++k) {
                const auto i = p.size() <= 20 ? k : pick(rng);
                const double numeric = central_difference([&] { return obj.value(s); }, p.data()[i]);
                EXPECT_LT(relative_error(g.data()[i], numeric, 1e-6), 1e-4)
                    << params[t].first << "[" << i << "] fusion=" << fusion << " analytic " << g.data()[i]
                    << " numeric " << numeric;
            }
        }
    }
}

TEST(ModelInvariants, ProbabilitiesStayInOpenUnitInterval) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = small_state(100 + trial);
        Model model;
        std::vector<std::size_t> prefix{static_cast<std::size_t>(trial % 12), 4, 2};
        const auto f = model.forward(s, project_intents(s), prefix);
        for (Eigen::Index c = 0; c < f.y_hat.size(); ++c) {
            EXPECT_GT(f.y_hat[c], 0.0);
            EXPECT_LT(f.y_hat[c], 1.0);
        }
    }
}

TEST(ModelInvariants, FilterDropsIntentsAtOrBelowThreshold) {
    EXPECT_EQ(nn::filter(0.5, 0.5), 0.0);
    EXPECT_EQ(nn::filter(0.4999, 0.5), 0.0);
    EXPECT_EQ(nn::filter(0.5000001, 0.5), 0.5000001);

    // Changing the value vector of a filtered-out intent must leave g untouched.
    for (std::uint64_t seed = 1; seed < 30; ++seed) {
        auto s = small_state(seed);
        Model model;
        const std::vector<std::size_t> prefix{1, 2, 3};
        const auto base = model.forward(s, project_intents(s), prefix);
        for (Eigen::Index c = 0; c < base.y_hat.size(); ++c) {
            if (base.y_hat[c] > s.tau) continue;
            auto proj = project_intents(s);
            proj.values.row(c).setConstant(123.0);
            const auto moved = model.forward(s, proj, prefix);
            EXPECT_EQ(moved.g, base.g) << "intent " << c << " with y=" << base.y_hat[c] << " leaked into g";
        }
    }
}

TEST(ModelInvariants, ResidualIdentity) {
    for (std::uint64_t seed = 1; seed < 10; ++seed) {
        auto s = small_state(seed);
        Model model;
        const auto f = model.forward(s, project_intents(s), std::vector<std::size_t>{5, 6});
        EXPECT_EQ(f.h_tilde, Vec(f.h + f.g));
        const Vec back = f.h_tilde - f.g;
        for (Eigen::Index i = 0; i < back.size(); ++i)
            EXPECT_NEAR(back[i], f.h[i], 4 * std::numeric_limits<double>::epsilon() * (std::abs(f.h_tilde[i]) + std::abs(f.g[i])));
    }
}

TEST(ModelInvariants, FusionOffLeavesRepresentationUnchanged) {
    auto s = small_state(4);
    s.use_fusion = false;
    Model model;
    const auto f = model.forward(s, project_intents(s), std::vector<std::size_t>{5, 6, 7});
    EXPECT_EQ(f.h_tilde, f.h);
    EXPECT_TRUE(f.g.isZero(0.0));
}

TEST(ModelInvariants, SigmoidPreservesRanking) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int trial = 0; trial < 50; ++trial) {
        Vec scores(40);
        for (auto& v : scores) v = u(rng);
        const Vec probs = nn::sigmoid(scores);
        std::vector<int> a(40), b(40);
        std::iota(a.begin(), a.end(), 0);
        std::iota(b.begin(), b.end(), 0);
        std::stable_sort(a.begin(), a.end(), [&](int i, int j) { return scores[i] > scores[j]; });
        std::stable_sort(b.begin(), b.end(), [&](int i, int j) { return probs[i] > probs[j]; });
        EXPECT_EQ(a, b);
    }
}

TEST(ModelInvariants, EvalForwardIsPure) {
    auto s = small_state(8);
    Model model;
    const auto proj = project_intents(s);
    const std::vector<std::size_t> prefix{0, 10, 2};
    const auto a = model.forward(s, proj, prefix);
    const auto b = model.forward(s, proj, prefix);
    EXPECT_EQ(a.h_tilde, b.h_tilde);
    EXPECT_EQ(a.y_hat, b.y_hat);
    EXPECT_EQ(a.dropout_mask.size(), 0);
}

TEST(ModelInvariants, TrainModeDropoutIsSeeded) {
    auto s = small_state(8);
    s.dropout_rate = 0.5;
    Model model;
    const auto proj = project_intents(s);
    const std::vector<std::size_t> prefix{0, 10, 2};
    std::mt19937_64 r1(5), r2(5);
    const auto a = model.forward(s, proj, prefix, &r1);
    const auto b = model.forward(s, proj, prefix, &r2);
    EXPECT_EQ(a.h_tilde, b.h_tilde);
    EXPECT_EQ(a.dropout_mask.size(), static_cast<Eigen::Index>(s.d));
}

TEST(Encoder, RejectsEmptyPrefix) {
    auto s = small_state(1);
    Model model;
    EXPECT_THROW(model.encode_session(s, std::vector<std::size_t>{}), DataError);
}

TEST(Recommend, SingleBestItemOutsidePrefix) {
    auto s = init_model(3, 2, 4, 1);
    s.item_embeddings << 1, 0, 0, 0,  //
        0, 1, 0, 0,                   //
        0, 0, 1, 0;
    const std::vector<std::size_t> prefix{0};
    const auto rec = recommend(s, prefix, 1);
    ASSERT_EQ(rec.items.size(), 1u);
    EXPECT_NE(rec.items[0].first, 0u);

    Model model;
    const auto f = model.forward(s, project_intents(s), prefix);
    const Vec scores = Model::score_items(s, f.h_tilde);
    const std::size_t expected = scores[1] >= scores[2] ? 1 : 2;
    EXPECT_EQ(rec.items[0].first, expected);
}

TEST(Recommend, RejectsNonPositiveK) {
    auto s = init_model(3, 2, 4, 1);
    EXPECT_THROW(recommend(s, std::vector<std::size_t>{0}, 0), ConfigError);
}

TEST(Recommend, TiesGoToSmallerIndexAndIntentsRespectThreshold) {
    auto s = init_model(5, 3, 4, 2);
    s.item_embeddings.setZero();
    const auto rec = recommend(s, std::vector<std::size_t>{2}, 3);
    ASSERT_EQ(rec.items.size(), 3u);
    EXPECT_EQ(rec.items[0].first, 0u);
    EXPECT_EQ(rec.items[1].first, 1u);
    EXPECT_EQ(rec.items[2].first, 3u);
    for (const auto& [c, p] : rec.intents) EXPECT_GT(p, s.tau);

    // All intents filtered out: still a recommendation, empty intent list.
    s.intent_embeddings.setZero();  // y = sigmoid(0) = 0.5, not > tau
    const auto none = recommend(s, std::vector<std::size_t>{2}, 2);
    EXPECT_TRUE(none.intents.empty());
    EXPECT_EQ(none.items.size(), 2u);
}
