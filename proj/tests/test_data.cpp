#include "support.hpp"

#include <map>
#include <set>

#include "veli4sbr/data.hpp"

using namespace veli4sbr;
using veli4sbr::testing::TempDir;

namespace {

// Share of session items whose cluster is one of the session's planted intents.
struct ClusterTally {
    std::size_t in_cluster = 0;
    std::size_t total = 0;
    double expected_noise_hits = 0;  // sum over items of |planted| / n_intents

    double fraction() const { return static_cast<double>(in_cluster) / static_cast<double>(total); }
};

ClusterTally tally(const SyntheticCorpus& c, int n_intents) {
    ClusterTally t;
    for (const auto& s : c.sessions) {
        const auto& planted = c.truth.session_intents.at(s.session_id);
        for (const auto id : s.items) {
            const auto& cluster = c.truth.item_cluster.at(id);
            t.in_cluster += std::count(planted.begin(), planted.end(), cluster) > 0;
            t.expected_noise_hits += static_cast<double>(planted.size()) / n_intents;
            ++t.total;
        }
    }
    return t;
}

}  // namespace

TEST(LoadDataset, RoundTripsOwnWriter) {
    TempDir dir("data");
    Catalog catalog;
    catalog.add({1, {{"title", "Soap"}, {"brand", "Acme"}}, {}});
    catalog.add({2, {{"title", "Tab\there"}}, {}});
    catalog.add({3, {{"title", "Lotion"}}, {}});
    const std::vector<Session> sessions{{10, {1, 2}}, {11, {3, 1, 2}}};
    util::write_file((dir / "catalog.tsv").string(), serialize_catalog(catalog));
    util::write_file((dir / "sessions.tsv").string(), serialize_sessions(sessions));

    const auto ds = load_dataset(dir / "catalog.tsv", dir / "sessions.tsv");
    ASSERT_EQ(ds.catalog.size(), 3u);
    ASSERT_EQ(ds.sessions.size(), 2u);
    EXPECT_EQ(*ds.catalog.at(1).field("brand"), "Acme");
    EXPECT_EQ(*ds.catalog.at(2).field("title"), "Tab here");
    EXPECT_EQ(ds.sessions[1].items, (std::vector<ItemId>{3, 1, 2}));
    EXPECT_EQ(ds.sessions[1].prefix(), (std::vector<ItemId>{3, 1}));
    EXPECT_EQ(ds.sessions[1].target(), 2);
}

TEST(LoadDataset, UnknownItemNamesTheSession) {
    TempDir dir("data");
    util::write_file((dir / "catalog.tsv").string(), "1\ttitle=a\n2\ttitle=b\n3\ttitle=c\n");
    util::write_file((dir / "sessions.tsv").string(), "5\t1,2\n6\t2,99\n");
    try {
        load_dataset(dir / "catalog.tsv", dir / "sessions.tsv");
        FAIL() << "expected a referential-integrity error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("session 6"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("99"), std::string::npos) << e.what();
    }
}

TEST(LoadDataset, EmptySessionsFileIsFine) {
    TempDir dir("data");
    util::write_file((dir / "catalog.tsv").string(), "1\ttitle=a\n");
    util::write_file((dir / "sessions.tsv").string(), "");
    const auto ds = load_dataset(dir / "catalog.tsv", dir / "sessions.tsv");
    EXPECT_TRUE(ds.sessions.empty());
    EXPECT_EQ(ds.catalog.size(), 1u);
}

TEST(LoadDataset, MalformedLinesReportLineNumbers) {
    const auto message = [](auto fn) {
        try {
            fn();
        } catch (const DataError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message([] { parse_sessions("1\t1,2\n2\t3\n"); }).find("line 2"), std::string::npos);
    EXPECT_NE(message([] { parse_sessions("1\t1,2\n\n3\tx,2\n"); }).find("line 3"), std::string::npos);
    EXPECT_NE(message([] { parse_sessions("1\t1,2\n1\t3,4\n"); }).find("duplicate"), std::string::npos);
    EXPECT_NE(message([] { parse_catalog("1\ttitle=a\nfoo\ttitle=b\n"); }).find("line 2"), std::string::npos);
    EXPECT_NE(message([] { parse_catalog("1\ttitle=a\n1\ttitle=b\n"); }).find("duplicate"), std::string::npos);
    EXPECT_NE(message([] { parse_catalog("1\tnovalue\n"); }).find("line 1"), std::string::npos);

    DatasetManifest m;
    m.fields = {"title"};
    EXPECT_THROW(parse_catalog("1\ttitle=a\tprice=3\n", &m), DataError);
    EXPECT_NO_THROW(parse_catalog("1\ttitle=a\n", &m));
}

TEST(Manifest, RoundTripAndUnknownKey) {
    DatasetManifest m;
    m.domain = "beauty";
    m.fields = {"title", "brand", "categories"};
    const auto back = DatasetManifest::parse(m.serialize());
    EXPECT_EQ(back.domain, "beauty");
    EXPECT_EQ(back.fields, m.fields);
    EXPECT_THROW(DatasetManifest::parse("domain=x\ncolour=red\n"), DataError);
}

TEST(Split, CountsFollowRatios) {
    std::vector<Session> sessions;
    for (SessionId s = 0; s < 100; ++s) sessions.push_back({s, {0, 1}});
    const auto out = split_sessions(sessions, {0.8, 0.1, 0.1}, 7);
    std::map<Split, int> counts;
    for (const auto& s : out) ++counts[s.split];
    EXPECT_EQ(counts[Split::Train], 80);
    EXPECT_EQ(counts[Split::Valid], 10);
    EXPECT_EQ(counts[Split::Test], 10);
    EXPECT_EQ(serialize_splits(out), serialize_splits(split_sessions(sessions, {0.8, 0.1, 0.1}, 7)));
    EXPECT_NE(serialize_splits(out), serialize_splits(split_sessions(sessions, {0.8, 0.1, 0.1}, 8)));
}

TEST(Split, RejectsBadRatios) {
    std::vector<Session> sessions{{1, {0, 1}}};
    EXPECT_THROW(split_sessions(sessions, {0.5, 0.5, 0.5}, 1), ConfigError);
    EXPECT_THROW(split_sessions(sessions, {1.2, -0.1, -0.1}, 1), ConfigError);
}

TEST(Split, ChronologicalModeOrdersBySessionId) {
    std::vector<Session> sessions;
    for (SessionId s = 9; s >= 0; --s) sessions.push_back({s, {0, 1}});
    const auto out = split_sessions(sessions, {0.6, 0.2, 0.2}, 1, SplitMode::Chronological);
    for (const auto& s : out) {
        const auto expect = s.session_id < 6 ? Split::Train : (s.session_id < 8 ? Split::Valid : Split::Test);
        EXPECT_EQ(s.split, expect) << "session " << s.session_id;
    }
}

TEST(Split, ApplySplitsRestoresAssignment) {
    std::vector<Session> sessions;
    for (SessionId s = 0; s < 30; ++s) sessions.push_back({s, {0, 1}});
    const auto assigned = split_sessions(sessions, {}, 3);
    apply_splits(sessions, serialize_splits(assigned));
    for (std::size_t i = 0; i < sessions.size(); ++i) EXPECT_EQ(sessions[i].split, assigned[i].split);
    EXPECT_THROW(apply_splits(sessions, "0\ttrain\n"), DataError);
}

TEST(Synthetic, IsAPureFunctionOfTheSeed) {
    SyntheticSpec spec;
    spec.n_sessions = 300;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    EXPECT_EQ(serialize_catalog(a.catalog), serialize_catalog(b.catalog));
    EXPECT_EQ(serialize_sessions(a.sessions), serialize_sessions(b.sessions));
    EXPECT_EQ(a.truth.serialize_sessions(), b.truth.serialize_sessions());
    EXPECT_EQ(a.truth.serialize_items(), b.truth.serialize_items());
    spec.seed = 2;
    EXPECT_NE(serialize_sessions(generate_synthetic(spec).sessions), serialize_sessions(a.sessions));
}

TEST(Synthetic, NoiselessSingleIntentSessionsStayInOneCluster) {
    const auto c = generate_synthetic({.n_sessions = 500, .intents_per_session = 1, .noise_rate = 0.0});
    for (const auto& s : c.sessions) {
        std::set<std::string> clusters;
        for (const auto id : s.items) clusters.insert(c.truth.item_cluster.at(id));
        EXPECT_EQ(clusters.size(), 1u) << "session " << s.session_id;
        EXPECT_EQ(*clusters.begin(), c.truth.session_intents.at(s.session_id).at(0));
    }
}

TEST(Synthetic, NoiselessTruthExplainsEveryItem) {
    const auto c = generate_synthetic({.n_sessions = 500, .intents_per_session = 3, .noise_rate = 0.0});
    const auto t = tally(c, 8);
    EXPECT_EQ(t.in_cluster, t.total);
}

TEST(Synthetic, InClusterShareMatchesNoiseRate) {
    // One planted intent per session: noise lands in the planted cluster 1/8 of the time.
    const auto single = generate_synthetic({.n_intents = 8, .n_items = 400, .n_sessions = 2000, .intents_per_session = 1,
                                            .noise_rate = 0.1});
    EXPECT_NEAR(tally(single, 8).fraction(), 0.9 + 0.1 / 8, 0.01);

    // Default 1-2 intents per session: noise hits |planted|/8 of the time.
    const auto mixed = generate_synthetic({.n_intents = 8, .n_items = 400, .n_sessions = 2000, .noise_rate = 0.1});
    const auto t = tally(mixed, 8);
    const double expected = 0.9 + 0.1 * t.expected_noise_hits / static_cast<double>(t.total);
    EXPECT_NEAR(t.fraction(), expected, 0.01);
}

TEST(Synthetic, StructureAndValidation) {
    const auto c = generate_synthetic({.n_sessions = 200});
    EXPECT_EQ(c.catalog.size(), 400u);
    EXPECT_EQ(c.sessions.size(), 200u);
    std::map<std::string, int> cluster_sizes;
    for (const auto& [id, cl] : c.truth.item_cluster) ++cluster_sizes[cl];
    EXPECT_EQ(cluster_sizes.size(), 8u);
    for (const auto& [cl, n] : cluster_sizes) EXPECT_EQ(n, 50);
    for (const auto& s : c.sessions) {
        EXPECT_GE(s.items.size(), 3u);
        EXPECT_LE(s.items.size(), 8u);
        EXPECT_EQ(std::set<ItemId>(s.items.begin(), s.items.end()).size(), s.items.size());
        const auto n = c.truth.session_intents.at(s.session_id).size();
        EXPECT_GE(n, 1u);
        EXPECT_LE(n, 2u);
    }
    EXPECT_NO_THROW(check_referential_integrity(c.catalog, c.sessions));

    EXPECT_THROW(generate_synthetic({.n_sessions = 0}), ConfigError);
    EXPECT_THROW(generate_synthetic({.n_intents = 8, .n_items = 4}), ConfigError);
    EXPECT_THROW(generate_synthetic({.noise_rate = 1.5}), ConfigError);
    EXPECT_THROW(generate_synthetic({.items_per_intent = 7}), ConfigError);
}

TEST(GroundTruthFiles, RoundTrip) {
    const auto c = generate_synthetic({.n_sessions = 50});
    const auto back = GroundTruth::parse(c.truth.serialize_sessions(), c.truth.serialize_items());
    EXPECT_EQ(back.session_intents, c.truth.session_intents);
    EXPECT_EQ(back.item_cluster, c.truth.item_cluster);
    EXPECT_EQ(back.intent_names.size(), 8u);
}
