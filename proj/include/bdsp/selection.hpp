#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bdsp/errors.hpp"
#include "bdsp/random.hpp"
#include "bdsp/types.hpp"
#include "bdsp/valuation.hpp"

namespace bdsp {

enum class SelectionKind { random, greedy, contribution };

struct SelectionPolicy {
    SelectionKind kind = SelectionKind::contribution;
    std::size_t k = 10;
    std::size_t exploration_period = 5;  // contribution: rounds with t % period == 0 select at random
    std::uint64_t seed = 0;

    void validate(std::size_t num_orgs) const {
        if (k == 0) throw InputError("clients per round must be positive");
        if (k > num_orgs)
            throw InputError("cannot select " + std::to_string(k) + " of " + std::to_string(num_orgs) + " organizations");
        if (exploration_period == 0) throw InputError("exploration_period must be positive");
    }
};

/// Uniform k-subset without replacement, returned in ascending order.
inline std::vector<OrgId> select_random(std::span<const OrgId> orgs, std::size_t k, std::uint64_t round_seed) {
    if (k > orgs.size())
        throw InputError("cannot select " + std::to_string(k) + " of " + std::to_string(orgs.size()) + " organizations");
    std::vector<OrgId> pool(orgs.begin(), orgs.end());
    std::sort(pool.begin(), pool.end());
    Rng rng(round_seed);
    // Partial Fisher-Yates: the first k slots end up a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// Grows a coalition one organization at a time, each step adding the player
/// with the largest marginal utility (lower id on ties). U(S) is fixed within
/// a step, so the largest U(S u {i}) is the largest marginal.
template <CoalitionGame G>
std::vector<OrgId> select_greedy(const G& game, std::size_t k) {
    const auto players = game.players();
    if (k > players.size())
        throw InputError("greedy selection of " + std::to_string(k) + " from a pool of " +
                         std::to_string(players.size()));
    Coalition chosen = 0;
    for (std::size_t step = 0; step < k; ++step) {
        std::size_t best = players.size();
        double best_value = 0.0;
        for (std::size_t p = 0; p < players.size(); ++p) {
            const Coalition bit = Coalition{1} << p;
            if (chosen & bit) continue;
            const double value = game.value(chosen | bit);
            if (best == players.size() || value > best_value) {
                best = p;
                best_value = value;
            }
        }
        chosen |= Coalition{1} << best;
    }
    std::vector<OrgId> out;
    for (std::size_t p = 0; p < players.size(); ++p)
        if (chosen >> p & 1) out.push_back(players[p]);
    return out;
}

/// Exploration rounds (round % exploration_period == 0) sample at random;
/// other rounds take the k highest accumulated scores, lower id on ties.
inline std::vector<OrgId> select_by_contribution(const std::map<OrgId, double>& scores, std::size_t k,
                                                 std::uint64_t round, const SelectionPolicy& policy) {
    if (k > scores.size())
        throw InputError("cannot select " + std::to_string(k) + " of " + std::to_string(scores.size()) + " organizations");
    if (policy.exploration_period == 0) throw InputError("exploration_period must be positive");
    std::vector<OrgId> ids;
    for (const auto& [org, score] : scores) ids.push_back(org);
    if (round % policy.exploration_period == 0) return select_random(ids, k, derive_seed(policy.seed, {round}));

    std::stable_sort(ids.begin(), ids.end(), [&](OrgId a, OrgId b) { return scores.at(a) > scores.at(b); });
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace bdsp
