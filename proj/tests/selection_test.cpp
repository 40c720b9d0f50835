#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "bdsp/selection.hpp"
#include "test_support.hpp"

namespace bdsp {
namespace {

std::vector<OrgId> ids(std::size_t n) {
    std::vector<OrgId> out(n);
    std::iota(out.begin(), out.end(), OrgId{0});
    return out;
}

TabularGame additive(std::vector<double> a) {
    return TabularGame::from_function(ids(a.size()), [&](Coalition c) {
        double s = 0;
        for (std::size_t p = 0; p < a.size(); ++p)
            if (c >> p & 1) s += a[p];
        return s;
    });
}

bool distinct_from_pool(const std::vector<OrgId>& sel, std::span<const OrgId> pool, std::size_t k) {
    const std::set<OrgId> s(sel.begin(), sel.end());
    if (s.size() != k || sel.size() != k) return false;
    for (OrgId id : sel)
        if (std::find(pool.begin(), pool.end(), id) == pool.end()) return false;
    return true;
}

TEST(SelectRandom, FullPool) {
    const std::vector<OrgId> pool{4, 9, 2, 7};
    EXPECT_EQ(select_random(pool, 4, 11), (std::vector<OrgId>{2, 4, 7, 9}));
}

TEST(SelectRandom, SameSeedSameSingleton) {
    const auto pool = ids(30);
    EXPECT_EQ(select_random(pool, 1, 123), select_random(pool, 1, 123));
    EXPECT_EQ(select_random(pool, 1, 123).size(), 1u);
}

TEST(SelectRandom, InclusionFrequencyIsUniform) {
    const auto pool = ids(5);
    constexpr int draws = 10000;
    std::map<OrgId, int> hits;
    for (int d = 0; d < draws; ++d)
        for (OrgId id : select_random(pool, 2, derive_seed(77, {static_cast<std::uint64_t>(d)}))) ++hits[id];
    const double p = 0.4, sigma = std::sqrt(draws * p * (1 - p));
    for (OrgId id : pool) EXPECT_LE(std::abs(hits[id] - draws * p), 3 * sigma) << "org " << id;
}

TEST(SelectRandom, OversizedRequest) {
    EXPECT_THROW(select_random(ids(3), 4, 0), InputError);
}

TEST(SelectGreedy, AdditiveTopTwo) {
    EXPECT_EQ(select_greedy(additive({3, 1, 2}), 2), (std::vector<OrgId>{0, 2}));
    EXPECT_EQ(select_greedy(additive({3, 1, 2}), 1), (std::vector<OrgId>{0}));
}

TEST(SelectGreedy, TiesGoToLowerId) {
    EXPECT_EQ(select_greedy(additive({1, 2, 2, 2}), 2), (std::vector<OrgId>{1, 2}));
}

TEST(SelectGreedy, MatchesExhaustiveSearchOnCoverageGames) {
    // Weighted coverage is submodular; with a few distinct weights and
    // disjoint-enough sets greedy is optimal, which the brute force confirms.
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::vector<double> element_weight(6);
        for (double& w : element_weight) w = uniform_real(rng, 0.5, 1.5);
        std::vector<unsigned> covers(5);
        // Each org covers one private element plus maybe one shared element.
        for (std::size_t p = 0; p < 5; ++p) covers[p] = (1u << p) | (uniform01(rng) < 0.5 ? 1u << 5 : 0u);
        const TabularGame g = TabularGame::from_function(ids(5), [&](Coalition c) {
            unsigned cov = 0;
            for (std::size_t p = 0; p < 5; ++p)
                if (c >> p & 1) cov |= covers[p];
            double s = 0;
            for (std::size_t e = 0; e < 6; ++e)
                if (cov >> e & 1) s += element_weight[e];
            return s;
        });
        double best = -1;
        for (Coalition c = 0; c < 32; ++c)
            if (std::popcount(c) == 3) best = std::max(best, g.value(c));
        const auto sel = select_greedy(g, 3);
        EXPECT_NEAR(g.value(coalition_of(g, sel)), best, 1e-12) << "seed " << seed;
    }
}

TEST(SelectGreedy, PoolTooSmall) {
    EXPECT_THROW(select_greedy(additive({1, 2}), 3), InputError);
}

TEST(SelectByContribution, TopScores) {
    const std::map<OrgId, double> scores{{0, 0.5}, {1, 0.3}, {2, 0.2}};
    const SelectionPolicy pol{.k = 2, .exploration_period = 5};
    EXPECT_EQ(select_by_contribution(scores, 2, 1, pol), (std::vector<OrgId>{0, 1}));
}

TEST(SelectByContribution, RoundZeroExplores) {
    std::map<OrgId, double> scores;
    for (OrgId id = 0; id < 20; ++id) scores[id] = id == 19 ? 100.0 : 0.0;
    const SelectionPolicy pol{.k = 3, .exploration_period = 5, .seed = 4};
    const std::vector<OrgId> pool = ids(20);
    EXPECT_EQ(select_by_contribution(scores, 3, 0, pol), select_random(pool, 3, derive_seed(4, {0})));
    EXPECT_EQ(select_by_contribution(scores, 3, 10, pol), select_random(pool, 3, derive_seed(4, {10})));
    EXPECT_EQ(select_by_contribution(scores, 3, 1, pol), (std::vector<OrgId>{0, 1, 19}));
}

TEST(SelectByContribution, AllZeroTieRule) {
    std::map<OrgId, double> scores;
    for (OrgId id = 0; id < 8; ++id) scores[id] = 0.0;
    EXPECT_EQ(select_by_contribution(scores, 4, 3, {.k = 4}), (std::vector<OrgId>{0, 1, 2, 3}));
}

TEST(SelectByContribution, ScaleInvariant) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::map<OrgId, double> scores, scaled;
        for (OrgId id = 0; id < 12; ++id) {
            const double v = uniform_real(rng, -1, 1);
            scores[id] = v;
            scaled[id] = 3.7 * v;
        }
        const std::uint64_t round = 1 + static_cast<std::uint64_t>(trial % 4);
        EXPECT_EQ(select_by_contribution(scores, 5, round, {.k = 5}), select_by_contribution(scaled, 5, round, {.k = 5}));
    }
}

TEST(Selection, EveryStrategyReturnsKDistinctMembers) {
    const TabularGame g = testing::random_game(7, 3);
    const auto pool = g.players();
    std::map<OrgId, double> scores;
    for (OrgId id : pool) scores[id] = static_cast<double>(id % 3);
    for (std::size_t k = 1; k <= 7; ++k) {
        EXPECT_TRUE(distinct_from_pool(select_random(pool, k, k), pool, k));
        EXPECT_TRUE(distinct_from_pool(select_greedy(g, k), pool, k));
        for (std::uint64_t round = 0; round < 3; ++round)
            EXPECT_TRUE(distinct_from_pool(select_by_contribution(scores, k, round, {.k = k}), pool, k));
    }
}

TEST(SelectionPolicy, Validation) {
    EXPECT_THROW((SelectionPolicy{.k = 0}.validate(5)), InputError);
    EXPECT_THROW((SelectionPolicy{.k = 6}.validate(5)), InputError);
    EXPECT_THROW((SelectionPolicy{.k = 2, .exploration_period = 0}.validate(5)), InputError);
    EXPECT_NO_THROW((SelectionPolicy{.k = 5}.validate(5)));
}

}  // namespace
}  // namespace bdsp
