#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <map>
#include <numbers>

#include "bdsp/valuation.hpp"
#include "test_support.hpp"

namespace bdsp {
namespace {

using testing::row;

TabularGame additive_game(std::vector<double> a) {
    std::vector<OrgId> ids(a.size());
    std::iota(ids.begin(), ids.end(), OrgId{0});
    return TabularGame::from_function(ids, [&](Coalition c) {
        double s = 0;
        for (std::size_t p = 0; p < a.size(); ++p)
            if (c >> p & 1) s += a[p];
        return s;
    });
}

// Coalition value = number of members; big enough to trip the enumeration guard.
struct CountingGame {
    std::vector<OrgId> ids;
    std::span<const OrgId> players() const { return ids; }
    double value(Coalition c) const { return std::popcount(c); }
};

CountingGame counting_game(std::size_t n) {
    CountingGame g;
    for (std::size_t i = 0; i < n; ++i) g.ids.push_back(static_cast<OrgId>(i));
    return g;
}

Dataset hand_server_test() {
    Dataset d(2);
    d.push_back(row({1, 2}, 1));
    d.push_back(row({-1, 0}, 0));
    d.push_back(row({0, 4}, 1));
    d.push_back(row({2, -2}, 0));
    return d;
}

ModelParams logistic(double w0, double w1, double b) {
    ModelParams p = zero_model({2, 1});
    p.weights = {w0, w1, b};
    return p;
}

TEST(Utility, ModelThatMadeNoProgressIsWorthZero) {
    const Dataset ds = hand_server_test();
    const ModelParams prior = logistic(0.3, -0.1, 0.05);
    const ModelUtilityGame g(0, prior, {{4, prior}, {9, logistic(1, 1, 1)}}, ds);
    EXPECT_EQ(utility(g, std::vector<OrgId>{4}), 0.0);
    EXPECT_EQ(g.value(0), 0.0);
    EXPECT_EQ(utility(g, std::vector<OrgId>{}), 0.0);
}

TEST(Utility, MatchesHandComputedBce) {
    // Values from per-example BCE with the prior at ln 2.
    const Dataset ds = hand_server_test();
    const ModelUtilityGame g(3, zero_model({2, 1}), {{1, logistic(1.0, -0.5, 0.2)}, {2, logistic(0.2, 0.3, -0.4)}}, ds);
    EXPECT_NEAR(g.prior_loss(), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(utility(g, std::vector<OrgId>{1, 2}), -0.17500950228182566, 1e-13);
    EXPECT_NEAR(utility(g, std::vector<OrgId>{1}), -0.8473954391945234, 1e-13);
    EXPECT_NEAR(utility(g, std::vector<OrgId>{2}), 0.25337422573006985, 1e-13);
    EXPECT_EQ(g.round(), 3u);
}

TEST(Utility, UnknownOrganizationIsAnInputError) {
    const Dataset ds = hand_server_test();
    const ModelUtilityGame g(0, zero_model({2, 1}), {{1, logistic(1, 0, 0)}}, ds);
    EXPECT_THROW(utility(g, std::vector<OrgId>{7}), InputError);
    EXPECT_THROW(g.value(0b10), InputError);
}

TEST(Utility, RejectsShapeMismatch) {
    const Dataset ds = hand_server_test();
    EXPECT_THROW(ModelUtilityGame(0, zero_model({2, 1}), {{1, zero_model({2, 3, 1})}}, ds), InputError);
    EXPECT_THROW(ModelUtilityGame(0, zero_model({2, 1}), {}, Dataset(2)), InputError);
}

TEST(Utility, CacheIsCoherent) {
    const Dataset ds = testing::random_dataset(30, 3, 4);
    std::map<OrgId, ModelParams> subs;
    for (OrgId k = 0; k < 4; ++k) subs.emplace(k, testing::random_model({3, 2, 1}, k));
    const ModelUtilityGame g(0, testing::random_model({3, 2, 1}, 99), subs, ds);
    const double first = g.value(0b1011);
    EXPECT_EQ(g.cached_coalitions(), 1u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(g.value(0b1011)), std::bit_cast<std::uint64_t>(first));
    EXPECT_EQ(g.cached_coalitions(), 1u);
    exact_shapley(g);
    EXPECT_EQ(g.cached_coalitions(), 15u);  // every non-empty coalition
    EXPECT_EQ(g.value(0b1011), first);
}

TEST(ExactShapley, AdditiveGame) {
    const auto r = exact_shapley(additive_game({1, 2, 3}));
    EXPECT_NEAR(r.values.at(0), 1.0, 1e-12);
    EXPECT_NEAR(r.values.at(1), 2.0, 1e-12);
    EXPECT_NEAR(r.values.at(2), 3.0, 1e-12);
    EXPECT_EQ(r.num_evaluations, 8u);
    EXPECT_EQ(r.method, ShapleyMethod::exact);
}

TEST(ExactShapley, PlayerTheGameIgnoresGetsZero) {
    const TabularGame g = TabularGame::from_function({0, 1, 2}, [](Coalition c) {
        return (c & 1 ? 2.0 : 0.0) + (c & 2 ? 1.5 : 0.0) + ((c & 3) == 3 ? 0.7 : 0.0);
    });
    EXPECT_NEAR(exact_shapley(g).values.at(2), 0.0, 1e-12);
}

TEST(ExactShapley, ThreePlayerTableMatchesPermutationOracle) {
    // Players 1,2,3 stored at bit positions 0,1,2.
    const TabularGame g({1, 2, 3}, {0, 1, 1, 3, 0, 1, 1, 3});
    const auto oracle = testing::permutation_shapley(g);
    EXPECT_NEAR(oracle.at(1), 1.5, 1e-15);
    EXPECT_NEAR(oracle.at(2), 1.5, 1e-15);
    EXPECT_NEAR(oracle.at(3), 0.0, 1e-15);
    const auto r = exact_shapley(g);
    for (OrgId id : {1u, 2u, 3u}) EXPECT_NEAR(r.values.at(id), oracle.at(id), 1e-12);
}

TEST(ExactShapley, RandomGamesMatchOracleAndAreEfficient) {
    for (std::size_t n = 1; n <= 8; ++n) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const TabularGame g = testing::random_game(n, seed * 31 + n);
            const auto r = exact_shapley(g);
            const auto oracle = testing::permutation_shapley(g);
            double sum = 0;
            for (const auto& [id, v] : r.values) {
                EXPECT_NEAR(v, oracle.at(id), 1e-12) << "n=" << n << " id=" << id;
                sum += v;
            }
            EXPECT_NEAR(sum, g.value(full_coalition(n)), 1e-9);
        }
    }
}

TEST(ExactShapley, ModelGameIsEfficient) {
    const Dataset ds = testing::random_dataset(40, 4, 2);
    std::map<OrgId, ModelParams> subs;
    for (OrgId k : {3u, 5u, 8u, 13u, 21u}) subs.emplace(k, testing::random_model({4, 3, 1}, k, 0.7));
    const ModelUtilityGame g(0, testing::random_model({4, 3, 1}, 1, 0.7), subs, ds);
    const auto r = exact_shapley(g);
    double sum = 0;
    for (const auto& [id, v] : r.values) sum += v;
    EXPECT_NEAR(sum, g.value(full_coalition(5)), 1e-9);
}

TEST(ExactShapley, IdenticalSubmissionsSwapCleanly) {
    const Dataset ds = testing::random_dataset(40, 3, 6);
    const ModelParams twin = testing::random_model({3, 1}, 5), other = testing::random_model({3, 1}, 6);
    const ModelParams prior = testing::random_model({3, 1}, 7);
    const ModelUtilityGame g1(0, prior, {{0, twin}, {1, twin}, {2, other}}, ds);
    const ModelUtilityGame g2(0, prior, {{0, other}, {1, twin}, {2, twin}}, ds);
    const auto a = exact_shapley(g1), b = exact_shapley(g2);
    EXPECT_NEAR(a.values.at(0), a.values.at(1), 1e-12);
    EXPECT_NEAR(a.values.at(0), b.values.at(2), 1e-12);
    EXPECT_NEAR(a.values.at(2), b.values.at(0), 1e-12);
}

TEST(ExactShapley, EnumerationGuard) {
    EXPECT_THROW(exact_shapley(counting_game(21)), CapacityError);
    EXPECT_NO_THROW(tmc_shapley(counting_game(21), {.max_permutations = 5}));
    EXPECT_TRUE(exact_shapley(counting_game(0)).values.empty());
}

TEST(TmcShapley, ConvergesOnAdditiveGame) {
    const auto r = tmc_shapley(additive_game({1, 2, 3}),
                               {.truncation_tol = 0, .max_permutations = 100000, .convergence_tol = 1e-3, .seed = 1});
    EXPECT_NEAR(r.values.at(0), 1.0, 0.05);
    EXPECT_NEAR(r.values.at(1), 2.0, 0.05);
    EXPECT_NEAR(r.values.at(2), 3.0, 0.05);
    EXPECT_EQ(r.method, ShapleyMethod::tmc);
}

TEST(TmcShapley, SinglePlayerTakesOnePermutation) {
    const TabularGame g({7}, {0, 0.42});
    const auto r = tmc_shapley(g, {.max_permutations = 500, .seed = 3});
    EXPECT_EQ(r.permutations, 1u);
    EXPECT_EQ(r.values.at(7), 0.42);
    EXPECT_EQ(r.std_error.at(7), 0.0);
}

TEST(TmcShapley, DeterministicGivenSeed) {
    const TabularGame g = testing::random_game(6, 9);
    const TmcOptions opt{.max_permutations = 300, .seed = 12};
    EXPECT_EQ(tmc_shapley(g, opt), tmc_shapley(g, opt));
    TmcOptions other = opt;
    other.seed = 13;
    EXPECT_NE(tmc_shapley(g, opt).values, tmc_shapley(g, other).values);
}

// U(S) = x + x^2 / 2 with x the summed member weights in [0, 1]: not additive,
// and the values are not swamped by the spread of single marginals.
TabularGame quadratic_game(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> a(n);
    for (double& w : a) w = uniform01(rng);
    std::vector<OrgId> ids(n);
    std::iota(ids.begin(), ids.end(), OrgId{0});
    return TabularGame::from_function(ids, [&](Coalition c) {
        double x = 0;
        for (std::size_t p = 0; p < n; ++p)
            if (c >> p & 1) x += a[p];
        return x + 0.5 * x * x;
    });
}

TEST(TmcShapley, ApproachesExactWithoutTruncation) {
    for (std::size_t n = 2; n <= 8; ++n) {
        const TabularGame g = quadratic_game(n, 500 + n);
        const auto exact = exact_shapley(g);
        const auto est = tmc_shapley(
            g, {.truncation_tol = 0, .max_permutations = 20000, .convergence_tol = 0, .seed = n});
        EXPECT_EQ(est.permutations, 20000u);
        double scale = 0, worst = 0;
        for (const auto& [id, v] : exact.values) {
            scale = std::max(scale, std::abs(v));
            worst = std::max(worst, std::abs(v - est.values.at(id)));
        }
        EXPECT_LT(worst, 0.02 * scale) << "n=" << n;
    }
}

TEST(TmcShapley, ErrorWithinReportedStandardErrorOnNoiseTables) {
    // Uniform random tables have values near zero next to unit-scale
    // marginals, so only a statistical bound is meaningful there.
    for (std::size_t n = 2; n <= 8; ++n) {
        const TabularGame g = testing::random_game(n, 500 + n);
        const auto exact = exact_shapley(g);
        const auto est = tmc_shapley(
            g, {.truncation_tol = 0, .max_permutations = 20000, .convergence_tol = 0, .seed = n});
        for (const auto& [id, v] : exact.values) {
            EXPECT_GT(est.std_error.at(id), 0.0);
            EXPECT_LE(std::abs(v - est.values.at(id)), 4.0 * est.std_error.at(id)) << "n=" << n << " id=" << id;
        }
    }
}

TEST(TmcShapley, TruncationSkipsEvaluations) {
    // Once the first player is in, the prefix already equals U(I).
    const TabularGame g = TabularGame::from_function({0, 1, 2, 3}, [](Coalition c) { return c & 1 ? 1.0 : 0.0; });
    const auto r = tmc_shapley(g, {.truncation_tol = 1e-9, .max_permutations = 200, .convergence_tol = 0, .seed = 2});
    EXPECT_LT(r.num_evaluations, 1 + 200u * 4);
    EXPECT_NEAR(r.values.at(0), 1.0, 1e-12);
    EXPECT_EQ(r.values.at(1), 0.0);
}

TEST(TmcShapley, StopsOnceStable) {
    const auto r = tmc_shapley(additive_game({1, 1}), {.truncation_tol = 0, .max_permutations = 1000, .seed = 0});
    EXPECT_EQ(r.permutations, 11u);  // first permutation has no prior mean, then a window of 10
    EXPECT_THROW(tmc_shapley(additive_game({1}), {.max_permutations = 0}), InputError);
    EXPECT_THROW(tmc_shapley(additive_game({1}), {.truncation_tol = -1}), InputError);
}

TEST(Axioms, SymmetricPair) {
    const TabularGame g({1, 2}, {0, 1, 1, 2});
    const auto r = exact_shapley(g);
    EXPECT_DOUBLE_EQ(r.values.at(1), 1.0);
    EXPECT_DOUBLE_EQ(r.values.at(2), 1.0);
    const auto rep = check_axioms(g, r, 1e-12);
    EXPECT_TRUE(rep.symmetry);
    ASSERT_EQ(rep.interchangeable_pairs.size(), 1u);
    EXPECT_TRUE(rep.all_hold());
}

TEST(Axioms, ConstantZeroGame) {
    const TabularGame g = TabularGame::from_function({0, 1, 2, 3}, [](Coalition) { return 0.0; });
    const auto r = exact_shapley(g);
    for (const auto& [id, v] : r.values) EXPECT_EQ(v, 0.0);
    const auto rep = check_axioms(g, r, 1e-12);
    EXPECT_EQ(rep.null_players.size(), 4u);
    EXPECT_EQ(rep.dummy_players.size(), 4u);
    EXPECT_TRUE(rep.all_hold());
}

TEST(Axioms, StandAloneDummyValue) {
    // Player 2 always adds exactly what it earns alone.
    const TabularGame g = TabularGame::from_function(
        {0, 1, 2}, [](Coalition c) { return ((c & 3) == 3 ? 5.0 : (c & 3 ? 1.0 : 0.0)) + (c & 4 ? 0.8 : 0.0); });
    const auto r = exact_shapley(g);
    EXPECT_NEAR(r.values.at(2), 0.8, 1e-12);
    const auto rep = check_axioms(g, r, 1e-9);
    EXPECT_EQ(rep.dummy_players, std::vector<OrgId>{2});
    EXPECT_TRUE(rep.null_players.empty());
    EXPECT_TRUE(rep.all_hold());
}

TEST(Axioms, AdditivityOnRandomPair) {
    const TabularGame a = testing::random_game(5, 71), b = testing::random_game(5, 72);
    const auto rep = check_axioms(a, exact_shapley(a), 1e-9, &b);
    ASSERT_TRUE(rep.additivity.has_value());
    EXPECT_TRUE(*rep.additivity);
    EXPECT_LT(rep.additivity_residual, 1e-9);
}

TEST(Axioms, ReportsViolations) {
    const TabularGame g({1, 2, 3}, {0, 1, 1, 3, 0, 1, 1, 3});
    ShapleyResult bogus = exact_shapley(g);
    bogus.values[1] += 0.1;
    bogus.values[3] = 0.2;
    const auto rep = check_axioms(g, bogus, 1e-9);
    EXPECT_FALSE(rep.symmetry);
    EXPECT_EQ(rep.symmetry_witness, std::make_pair(OrgId{1}, OrgId{2}));
    EXPECT_FALSE(rep.null_player);
    EXPECT_EQ(rep.dummy_witness, OrgId{3});
    EXPECT_FALSE(rep.all_hold());
}

TEST(Axioms, ScanGuard) {
    const CountingGame g = counting_game(13);
    ShapleyResult r;
    for (OrgId id : g.ids) r.values[id] = 1.0;
    EXPECT_THROW(check_axioms(g, r, 1e-9), CapacityError);
}

TEST(Accumulate, Examples) {
    EXPECT_TRUE(accumulate_contributions({}).empty());
    std::vector<ShapleyResult> two(2);
    two[0].values = {{0, 1.0}, {1, 0.0}};
    two[1].values = {{0, 0.0}, {1, 1.0}};
    EXPECT_EQ(accumulate_contributions(two), (std::map<OrgId, double>{{0, 1.0}, {1, 1.0}}));
}

TEST(Accumulate, MatchesRowByRowSummation) {
    Rng rng(8);
    std::vector<ShapleyResult> history(5);
    double expected[6] = {};
    for (auto& round : history)
        for (OrgId id = 0; id < 6; ++id) {
            if (uniform01(rng) < 0.3) continue;  // absent this round
            const double v = uniform_real(rng, -1, 1);
            round.values[id] = v;
            expected[id] += v;
        }
    const auto total = accumulate_contributions(history);
    for (const auto& [id, v] : total) EXPECT_DOUBLE_EQ(v, expected[id]);
}

}  // namespace
}  // namespace bdsp
