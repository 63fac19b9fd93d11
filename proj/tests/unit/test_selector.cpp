#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "longheads/selector.hpp"
#include "test_util.hpp"

using namespace longheads;

namespace {

// Representations whose score against e0 is scores[i].
std::vector<ChunkRepr> scored_reprs(const std::vector<double>& scores) {
    std::vector<ChunkRepr> out;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ChunkRepr r;
        r.chunk = i;
        r.c = {scores[i], 0.0, 0.0, 0.0};
        out.push_back(r);
    }
    return out;
}

std::vector<ChunkRepr> random_reprs(std::size_t m, std::size_t d, std::uint64_t seed) {
    std::vector<ChunkRepr> out;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        ChunkRepr r;
        r.chunk = i;
        r.c = testutil::random_vector(d, rng());
        out.push_back(r);
    }
    return out;
}

const Vector kE0{1.0, 0.0, 0.0, 0.0};

SelectionSet run_select(const Vector& q, const std::vector<ChunkRepr>& reprs, std::size_t k, Policy p,
                        std::uint64_t seed = 0) {
    auto rng = selection_rng(seed, 0, 0, 0);
    return select(q, reprs, k, p, rng);
}

}  // namespace

TEST(Selector, TwoBestCandidatesPlusMandatory) {
    // Chunks 0..9; candidates 1..8 with 6 and 7 scoring highest.
    const auto reprs = scored_reprs({0.0, 1.0, 0.5, 0.2, 0.3, 0.1, 5.0, 4.0, 0.4, 0.0});
    const SelectionSet s = run_select(kE0, reprs, 4, Policy::TopK);
    EXPECT_EQ(s.chunks, (std::vector<std::size_t>{0, 6, 7, 9}));
    EXPECT_EQ(s.candidates, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8}));
    EXPECT_EQ(s.scores.size(), 8u);
}

TEST(Selector, SaturatesToAllChunks) {
    const auto reprs = random_reprs(5, 4, 1);
    const SelectionSet s = run_select(kE0, reprs, 8, Policy::TopK);
    EXPECT_EQ(s.chunks, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Selector, SingleChunkHasNoDuplicates) {
    const auto reprs = random_reprs(1, 4, 2);
    const SelectionSet s = run_select(kE0, reprs, 4, Policy::TopK);
    EXPECT_EQ(s.chunks, (std::vector<std::size_t>{0}));
    EXPECT_TRUE(s.candidates.empty());
}

TEST(Selector, TiesGoToLowerChunk) {
    // Candidates 1, 2, 3 score 3, 1, 3; one slot.
    const auto reprs = scored_reprs({0.0, 3.0, 1.0, 3.0, 0.0});
    const SelectionSet s = run_select(kE0, reprs, 3, Policy::TopK);
    EXPECT_EQ(s.chunks, (std::vector<std::size_t>{0, 1, 4}));
}

TEST(Selector, LastKTakesLowestScores) {
    const auto reprs = scored_reprs({0.0, 9.0, -1.0, 4.0, -3.0, 2.0, 0.0});
    const SelectionSet s = run_select(kE0, reprs, 4, Policy::LastK);
    EXPECT_EQ(s.chunks, (std::vector<std::size_t>{0, 2, 4, 6}));
}

TEST(Selector, NoFirstRanksChunkZeroToo) {
    const auto reprs = scored_reprs({-5.0, 9.0, -1.0, 4.0, -3.0, 2.0, 0.0});
    const SelectionSet s = run_select(kE0, reprs, 3, Policy::NoFirst);
    EXPECT_EQ(s.chunks, (std::vector<std::size_t>{1, 3, 6}));
    EXPECT_EQ(s.candidates.front(), 0u);
}

TEST(Selector, RandomIsReproducibleAndSeedDependent) {
    const auto reprs = random_reprs(40, 4, 3);
    const SelectionSet a = run_select(kE0, reprs, 6, Policy::Random, 1);
    const SelectionSet b = run_select(kE0, reprs, 6, Policy::Random, 1);
    EXPECT_EQ(a, b);
    std::set<std::vector<std::size_t>> seen;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        seen.insert(run_select(kE0, reprs, 6, Policy::Random, seed).chunks);
    }
    EXPECT_GT(seen.size(), 1u);
}

TEST(Selector, RejectsBadInput) {
    const auto reprs = random_reprs(4, 4, 4);
    EXPECT_THROW(run_select(kE0, reprs, 1, Policy::TopK), std::invalid_argument);
    EXPECT_THROW(run_select(kE0, {}, 4, Policy::TopK), std::invalid_argument);
    EXPECT_THROW(run_select(Vector{}, reprs, 4, Policy::TopK), std::invalid_argument);
    EXPECT_THROW(run_select(Vector(3, 1.0), reprs, 4, Policy::TopK), std::invalid_argument);
    auto empty = reprs;
    empty[2].c.clear();
    EXPECT_THROW(run_select(kE0, empty, 4, Policy::TopK), std::invalid_argument);
}

TEST(HeadConstraints, UnconstrainedIsIdentity) {
    SelectionSet base;
    base.chunks = {0, 3, 5};
    EXPECT_EQ(apply_head_constraints(base, HeadConstraint::None, nullptr), base);
    EXPECT_THROW(apply_head_constraints(base, HeadConstraint::FixHead, nullptr), std::invalid_argument);
    SelectionSet ref;
    ref.chunks = {0, 1, 5};
    EXPECT_EQ(apply_head_constraints(base, HeadConstraint::FixLayer, &ref).chunks, ref.chunks);
}

TEST(HeadConstraints, FixHeadSharesWithinLayer) {
    SelectionPlanner planner(4, Policy::FixHead, 0);
    for (std::size_t layer = 0; layer < 2; ++layer) {
        std::vector<std::vector<std::size_t>> sets;
        for (std::size_t head = 0; head < 4; ++head) {
            const auto reprs = random_reprs(20, 4, layer * 10 + head);
            sets.push_back(planner.choose({layer, head, 99}, testutil::random_vector(4, head), reprs).chunks);
        }
        for (const auto& s : sets) {
            EXPECT_EQ(s, sets.front());
        }
    }
}

TEST(HeadConstraints, FixHeadAndLayerSharesEverywhere) {
    SelectionPlanner planner(4, Policy::FixHeadAndLayer, 0);
    std::vector<std::vector<std::size_t>> sets;
    for (std::size_t layer = 0; layer < 2; ++layer) {
        for (std::size_t head = 0; head < 2; ++head) {
            const auto reprs = random_reprs(20, 4, layer * 10 + head);
            sets.push_back(planner.choose({layer, head, 5}, testutil::random_vector(4, 7 + head), reprs).chunks);
        }
    }
    ASSERT_EQ(sets.size(), 4u);
    for (const auto& s : sets) {
        EXPECT_EQ(s, sets.front());
    }
}

TEST(HeadConstraints, FixLayerSharesAcrossLayersPerHead) {
    SelectionPlanner planner(4, Policy::FixLayer, 0);
    const auto reprs0 = random_reprs(20, 4, 1);
    const auto reprs1 = random_reprs(20, 4, 2);
    const auto h0 = planner.choose({0, 0, 5}, testutil::random_vector(4, 1), reprs0).chunks;
    const auto h1 = planner.choose({0, 1, 5}, testutil::random_vector(4, 2), reprs1).chunks;
    EXPECT_EQ(planner.choose({1, 0, 5}, testutil::random_vector(4, 3), reprs1).chunks, h0);
    EXPECT_EQ(planner.choose({1, 1, 5}, testutil::random_vector(4, 4), reprs0).chunks, h1);
}

TEST(HeadConstraints, MissingReferenceThrows) {
    SelectionPlanner planner(4, Policy::FixHead, 0);
    EXPECT_THROW(planner.choose({0, 1, 5}, kE0, random_reprs(10, 4, 1)), std::invalid_argument);
}

TEST(SelectorProperty, MandatoryChunksBudgetAndOrder) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t m = 1 + rng() % 60;
        const std::size_t k = 2 + rng() % 12;
        const Policy policy = std::array{Policy::TopK, Policy::Random, Policy::LastK}[rng() % 3];
        const auto reprs = random_reprs(m, 8, rng());
        auto r = selection_rng(rng(), 0, 0, 0);
        const SelectionSet s = select(testutil::random_vector(8, rng()), reprs, k, policy, r);
        ASSERT_FALSE(s.chunks.empty());
        EXPECT_EQ(s.chunks.front(), 0u);
        EXPECT_EQ(s.chunks.back(), m - 1);
        EXPECT_LE(s.chunks.size(), k);
        EXPECT_EQ(s.chunks.size(), std::min(k, m));
        EXPECT_TRUE(std::adjacent_find(s.chunks.begin(), s.chunks.end(), std::greater_equal<>()) == s.chunks.end());
    }
}

TEST(SelectorProperty, PositiveScalingKeepsSelection) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const auto reprs = random_reprs(30, 8, rng());
        Vector q = testutil::random_vector(8, rng());
        const SelectionSet a = run_select(q, reprs, 6, Policy::TopK);
        const double factor = 0.01 + static_cast<double>(rng() % 1000) / 10.0;
        for (double& x : q) {
            x *= factor;
        }
        EXPECT_EQ(run_select(q, reprs, 6, Policy::TopK).chunks, a.chunks);
    }
}

TEST(SelectorProperty, RaisingASelectedScoreKeepsIt) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> scores(25);
        for (double& s : scores) {
            s = static_cast<double>(rng() % 1000) / 100.0;
        }
        const SelectionSet a = run_select(kE0, scored_reprs(scores), 6, Policy::TopK);
        std::vector<std::size_t> inner(a.chunks.begin() + 1, a.chunks.end() - 1);
        const std::size_t pick = inner[rng() % inner.size()];
        scores[pick] += 1.0 + static_cast<double>(rng() % 100);
        const SelectionSet b = run_select(kE0, scored_reprs(scores), 6, Policy::TopK);
        EXPECT_TRUE(std::binary_search(b.chunks.begin(), b.chunks.end(), pick));
    }
}
