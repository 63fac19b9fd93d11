#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "longheads/analysis.hpp"
#include "test_util.hpp"

using namespace longheads;

namespace {

double naive_gini(const std::vector<double>& x) {
    const double m = static_cast<double>(x.size());
    double sum = 0.0;
    double pair = 0.0;
    for (double a : x) {
        sum += a;
        for (double b : x) {
            pair += std::abs(a - b);
        }
    }
    return pair / (2.0 * m * m * (sum / m));
}

SelectionTrace trace_with(std::size_t layers, std::size_t heads, const std::vector<std::vector<std::size_t>>& sets) {
    SelectionTrace t;
    t.meta.n_layers = layers;
    t.meta.n_heads = heads;
    std::size_t i = 0;
    for (const auto& s : sets) {
        SelectionRecord r;
        r.layer = (i / heads) % layers;
        r.head = i % heads;
        r.chunks = s;
        t.records.push_back(r);
        ++i;
    }
    return t;
}

SelectionTrace random_trace(std::mt19937_64& rng, std::size_t m, std::size_t records) {
    std::vector<std::vector<std::size_t>> sets;
    for (std::size_t i = 0; i < records; ++i) {
        std::set<std::size_t> s{0, m - 1};
        const std::size_t extra = rng() % 4;
        for (std::size_t e = 0; e < extra; ++e) {
            s.insert(rng() % m);
        }
        sets.emplace_back(s.begin(), s.end());
    }
    return trace_with(2, 4, sets);
}

SelectionRecord scored_record(const std::vector<std::size_t>& candidates, const std::vector<double>& scores) {
    SelectionRecord r;
    r.candidates = candidates;
    r.scores = scores;
    return r;
}

}  // namespace

TEST(Gini, ClosedFormValues) {
    const std::vector<double> uniform(50, 7.0);
    EXPECT_EQ(gini(uniform), 0.0);
    const std::vector<double> ramp{1, 2, 3, 4};
    EXPECT_EQ(gini(ramp), 0.25);
    std::vector<double> delta(100, 0.0);
    delta[37] = 12.0;
    EXPECT_NEAR(gini(delta), 0.99, 1e-12);
    const std::vector<std::uint64_t> counts{1, 2, 3, 4};
    EXPECT_EQ(gini(counts), 0.25);
}

TEST(Gini, RejectsDegenerateInput) {
    EXPECT_THROW(gini(std::vector<double>{}), std::invalid_argument);
    EXPECT_THROW(gini(std::vector<double>{0.0, 0.0}), std::invalid_argument);
    EXPECT_THROW(gini(std::vector<double>{1.0, -1.0}), std::invalid_argument);
}

TEST(GiniProperty, MatchesDoubleSumAndStaysInRange) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = 1 + rng() % 80;
        std::vector<double> x(m);
        for (double& v : x) {
            v = static_cast<double>(rng() % 20);
        }
        x[rng() % m] += 1.0;
        const double g = gini(x);
        EXPECT_NEAR(g, naive_gini(x), 1e-12);
        EXPECT_GE(g, 0.0);
        EXPECT_LE(g, 1.0 - 1.0 / static_cast<double>(m) + 1e-12);

        std::vector<double> scaled = x;
        for (double& v : scaled) {
            v *= 3.5;
        }
        EXPECT_NEAR(gini(scaled), g, 1e-12);
        std::shuffle(scaled.begin(), scaled.end(), rng);
        EXPECT_NEAR(gini(scaled), g, 1e-12);
    }
}

TEST(CoverRate, Examples) {
    std::vector<std::vector<std::size_t>> all;
    for (std::size_t c = 0; c < 10; ++c) {
        all.push_back({c});
    }
    EXPECT_EQ(cover_rate(trace_with(1, 1, all), 10), 1.0);
    EXPECT_EQ(cover_rate(trace_with(1, 1, {{0, 9}, {0, 9}, {9}}), 10), 0.2);
    EXPECT_THROW(cover_rate(SelectionTrace{}, 10), std::invalid_argument);
    EXPECT_THROW(cover_rate(trace_with(1, 1, {{0}}), 0), std::invalid_argument);
}

TEST(CoverRateProperty, MatchesSetUnionAndGrowsMonotonically) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 3 + rng() % 60;
        const SelectionTrace t = random_trace(rng, m, 1 + rng() % 40);
        std::set<std::size_t> seen;
        double prev = 0.0;
        SelectionTrace prefix;
        prefix.meta = t.meta;
        for (const SelectionRecord& r : t.records) {
            seen.insert(r.chunks.begin(), r.chunks.end());
            prefix.records.push_back(r);
            const double c = cover_rate(prefix, m);
            EXPECT_GE(c, prev);
            prev = c;
        }
        EXPECT_DOUBLE_EQ(cover_rate(t, m), static_cast<double>(seen.size()) / static_cast<double>(m));
    }
}

TEST(HitRate, Examples) {
    SelectionTrace first;
    first.records = {scored_record({1, 2, 3}, {9.0, 1.0, 2.0}), scored_record({1, 2, 3}, {5.0, 5.0, 0.0})};
    EXPECT_EQ(hit_rate(first, 1, 1), 1.0);

    SelectionTrace never;
    std::vector<std::size_t> cands;
    std::vector<double> scores;
    for (std::size_t c = 1; c <= 10; ++c) {
        cands.push_back(c);
        scores.push_back(c == 4 ? -1.0 : static_cast<double>(c));
    }
    never.records = {scored_record(cands, scores)};
    EXPECT_EQ(hit_rate(never, 4, 5), 0.0);
    EXPECT_EQ(hit_rate(never, 10, 1), 1.0);
    EXPECT_EQ(hit_rate(never, 6, 5), 1.0);  // 10, 9, 8, 7, 6

    SelectionTrace tie;
    tie.records = {scored_record({1, 2, 3}, {5.0, 5.0, 0.0})};
    EXPECT_EQ(hit_rate(tie, 2, 1), 0.0);
    EXPECT_EQ(hit_rate(tie, 2, 5), 1.0);

    SelectionTrace broken;
    broken.records = {scored_record({1, 2}, {1.0})};
    EXPECT_THROW(hit_rate(broken, 1, 1), std::invalid_argument);
}

TEST(HitRateProperty, TopFiveAtLeastTopOne) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        SelectionTrace t;
        for (int r = 0; r < 10; ++r) {
            std::vector<std::size_t> c;
            std::vector<double> s;
            for (std::size_t i = 1; i < 20; ++i) {
                c.push_back(i);
                s.push_back(static_cast<double>(rng() % 7));
            }
            t.records.push_back(scored_record(c, s));
        }
        const std::size_t target = 1 + rng() % 19;
        EXPECT_GE(hit_rate(t, target, 5), hit_rate(t, target, 1));
    }
}

TEST(Passkey, TargetScoresHighestForEveryHead) {
    PasskeyParams p;
    p.m = 64;
    p.target = 23;
    p.gap = 10.0;
    p.noise_seed = 4;
    const PasskeyInstance inst = build_passkey(p);
    EXPECT_FALSE(inst.mandatory_collision);
    ASSERT_EQ(inst.heads.size(), 8u);
    for (std::size_t layer = 0; layer < 2; ++layer) {
        for (std::size_t head = 0; head < 4; ++head) {
            const HeadStates& hs = inst.unit(layer, head);
            std::vector<double> scores;
            for (std::size_t c = 0; c < p.m; ++c) {
                const auto rows = [&](const Matrix& x) { return x.slice_rows(c * 16, (c + 1) * 16); };
                const Vector qc = chunk_query(rows(hs.q), rows(hs.k), rows(hs.v));
                scores.push_back(dot(inst.probe(layer, head), chunk_representation(qc, rows(hs.k))));
            }
            EXPECT_EQ(argmax(scores), p.target);
        }
    }
}

TEST(Passkey, ShiftAddsExactlyTheGap) {
    PasskeyParams p;
    p.m = 8;
    p.target = 3;
    p.noise_seed = 9;
    PasskeyParams flat = p;
    flat.gap = 0.0;
    const PasskeyInstance a = build_passkey(p);
    const PasskeyInstance b = build_passkey(flat);
    for (std::size_t u = 0; u < a.heads.size(); ++u) {
        const auto rows = [](const Matrix& x) { return x.slice_rows(48, 64); };
        const Vector qa = chunk_query(rows(a.heads[u].q), rows(a.heads[u].k), rows(a.heads[u].v));
        const Vector qb = chunk_query(rows(b.heads[u].q), rows(b.heads[u].k), rows(b.heads[u].v));
        const double sa = dot(a.probes[u], chunk_representation(qa, rows(a.heads[u].k)));
        const double sb = dot(b.probes[u], chunk_representation(qb, rows(b.heads[u].k)));
        EXPECT_NEAR(sa - sb, 10.0, 1e-9);
    }
}

TEST(Passkey, InvalidParameters) {
    PasskeyParams p;
    p.m = 2;
    EXPECT_THROW(build_passkey(p), std::invalid_argument);
    p.m = 8;
    p.target = 8;
    EXPECT_THROW(build_passkey(p), std::invalid_argument);
    p.target = 0;
    EXPECT_TRUE(build_passkey(p).mandatory_collision);
    p.target = 7;
    EXPECT_TRUE(build_passkey(p).mandatory_collision);
}

TEST(Passkey, LargeInstanceAlwaysSelectsTarget) {
    PasskeyParams p;
    p.m = 128;
    p.target = 77;
    p.noise_seed = 5;
    PasskeyRunOptions o;
    o.k = 8;
    o.queries = 4;
    const PasskeyTrialResult r = run_passkey_trial(build_passkey(p), o);
    EXPECT_EQ(r.trace.records.size(), 4u * 8);
    EXPECT_EQ(selected_rate(r.trace, p.target), 1.0);
    EXPECT_EQ(hit_rate(r.trace, p.target, 1), 1.0);
    for (std::uint64_t loaded : r.loaded_rows_per_step) {
        EXPECT_EQ(loaded, 8u * 8 * 16);
    }
    EXPECT_EQ(r.max_query_position, 8u * 16);
}

TEST(PasskeyProperty, ZeroGapIsChanceLevel) {
    // One unit per instance; 1200 independent instances.
    const std::size_t m = 12;
    std::mt19937_64 rng(6);
    double hits = 0.0;
    const int trials = 1200;
    for (int t = 0; t < trials; ++t) {
        PasskeyParams p;
        p.m = m;
        p.target = 1 + rng() % (m - 2);
        p.gap = 0.0;
        p.noise_seed = rng();
        p.n_layers = 1;
        p.n_heads = 1;
        const PasskeyTrialResult r = run_passkey_trial(build_passkey(p), PasskeyRunOptions{});
        hits += hit_rate(r.trace, p.target, 1);
    }
    const double rate = hits / trials;
    const double chance = 1.0 / static_cast<double>(m - 2);
    const double sigma = std::sqrt(chance * (1.0 - chance) / trials);
    EXPECT_NEAR(rate, chance, 3.0 * sigma);
}

TEST(Heatmap, ShapeAndMetadata) {
    PasskeyParams p;
    p.m = 16;
    p.target = 5;
    PasskeyRunOptions o;
    o.k = 4;
    o.queries = 3;
    const PasskeyTrialResult r = run_passkey_trial(build_passkey(p), o);
    const std::string csv = heatmap_csv(r.trace, 16);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("layer,head,c0,", 0), 0u);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 17);
        ++rows;
    }
    EXPECT_EQ(rows, 8u);

    const auto dir = std::filesystem::temp_directory_path() / "longheads_heatmap_test";
    std::filesystem::create_directories(dir);
    export_heatmap(r.trace, 16, (dir / "heat.csv").string());
    EXPECT_TRUE(std::filesystem::exists(dir / "heat.csv"));
    std::ifstream meta(dir / "heat.json");
    const auto j = nlohmann::json::parse(meta);
    EXPECT_EQ(j.at("m"), 16);
    EXPECT_EQ(j.at("records"), 24);
}

TEST(Heatmap, SaturatedSelectionGivesEqualCells) {
    PasskeyParams p;
    p.m = 6;
    p.target = 2;
    PasskeyRunOptions o;
    o.k = 8;
    const std::string csv = heatmap_csv(run_passkey_trial(build_passkey(p), o).trace, 6);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        EXPECT_EQ(line.substr(line.find(',', line.find(',') + 1)), ",1,1,1,1,1,1");
    }
}

TEST(Heatmap, FixHeadAndLayerRowsAreIdentical) {
    PasskeyParams p;
    p.m = 20;
    p.target = 7;
    p.gap = 0.0;
    PasskeyRunOptions o;
    o.k = 4;
    o.policy = Policy::FixHeadAndLayer;
    o.queries = 5;
    const std::string csv = heatmap_csv(run_passkey_trial(build_passkey(p), o).trace, 20);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::set<std::string> bodies;
    while (std::getline(in, line)) {
        bodies.insert(line.substr(line.find(',', line.find(',') + 1)));
    }
    EXPECT_EQ(bodies.size(), 1u);
}

TEST(Metrics, ReportCombinesEverything) {
    PasskeyParams p;
    p.m = 32;
    p.target = 9;
    const PasskeyTrialResult r = run_passkey_trial(build_passkey(p), PasskeyRunOptions{});
    const MetricsReport rep = compute_metrics(r.trace, 32, p.target);
    ASSERT_TRUE(rep.hit_rate_top1);
    EXPECT_EQ(*rep.hit_rate_top1, 1.0);
    EXPECT_EQ(*rep.hit_rate_top5, 1.0);
    EXPECT_EQ(rep.selection_counts[0], 8u);
    EXPECT_EQ(rep.selection_counts[9], 8u);
    const auto j = rep.to_json();
    EXPECT_TRUE(j.contains("gini"));
    EXPECT_FALSE(compute_metrics(r.trace, 32, std::nullopt).to_json().contains("hit_rate_top1"));
}
