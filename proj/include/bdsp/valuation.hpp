#pragma once

// Cooperative-game data valuation. A game maps coalitions of organizations to
// a real utility; the Shapley value of an organization is its average marginal
// contribution over all orderings of the players:
//
//   v_i = 1/N * sum_{S subset of I\{i}} [U(S u {i}) - U(S)] / C(N-1, |S|)
//
// Games expose their players (ascending OrgId) and value(Coalition), where
// bit p of the coalition refers to players()[p]. U(empty) is 0 for every game
// in this header.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bdsp/dataset.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/model.hpp"
#include "bdsp/random.hpp"
#include "bdsp/types.hpp"

namespace bdsp {

inline constexpr std::size_t kExactShapleyMaxPlayers = 20;
inline constexpr std::size_t kAxiomCheckMaxPlayers = 12;

template <class G>
concept CoalitionGame = requires(const G& g, Coalition c) {
    { g.players() } -> std::convertible_to<std::span<const OrgId>>;
    { g.value(c) } -> std::convertible_to<double>;
};

inline Coalition full_coalition(std::size_t n) { return n >= 64 ? ~Coalition{0} : (Coalition{1} << n) - 1; }

/// Explicit utility table indexed by coalition bitmask.
class TabularGame {
public:
    TabularGame(std::vector<OrgId> players, std::vector<double> values)
        : players_(std::move(players)), values_(std::move(values)) {
        if (players_.size() > kExactShapleyMaxPlayers) throw CapacityError("tabular games hold at most 20 players");
        if (!std::is_sorted(players_.begin(), players_.end()) ||
            std::adjacent_find(players_.begin(), players_.end()) != players_.end())
            throw InputError("players must be strictly ascending");
        if (values_.size() != (std::size_t{1} << players_.size()))
            throw InputError("a game over N players needs 2^N utilities");
        values_[0] = 0.0;
    }

    /// Builds the table by evaluating fn on every coalition.
    template <class Fn>
    static TabularGame from_function(std::vector<OrgId> players, Fn&& fn) {
        std::vector<double> values(std::size_t{1} << players.size());
        for (Coalition c = 0; c < values.size(); ++c) values[c] = c == 0 ? 0.0 : static_cast<double>(fn(c));
        return TabularGame(std::move(players), std::move(values));
    }

    std::span<const OrgId> players() const noexcept { return players_; }
    double value(Coalition c) const { return values_.at(c); }

private:
    std::vector<OrgId> players_;
    std::vector<double> values_;
};

/// Pointwise sum of two games over the same players.
template <CoalitionGame A, CoalitionGame B>
TabularGame sum_game(const A& a, const B& b) {
    const auto pa = a.players(), pb = b.players();
    if (!std::equal(pa.begin(), pa.end(), pb.begin(), pb.end())) throw InputError("summed games need identical players");
    return TabularGame::from_function(std::vector<OrgId>(pa.begin(), pa.end()),
                                      [&](Coalition c) { return a.value(c) + b.value(c); });
}

/// Per-round utility over submitted local models:
///   U(S) = L(w_prior, D_s) - L(mean_{k in S} w_k, D_s),  U(empty) = 0.
/// Values are memoized per coalition; the cache is safe for concurrent use and
/// an entry never changes once written.
class ModelUtilityGame {
public:
    ModelUtilityGame(std::uint64_t round, ModelParams prior_global, std::map<OrgId, ModelParams> submissions,
                     const Dataset& server_test)
        : round_(round), prior_(std::move(prior_global)), server_test_(&server_test) {
        if (server_test.empty()) throw InputError("utility game needs a non-empty server test set");
        validate_params(prior_);
        for (auto& [org, model] : submissions) {
            if (model.layer_dims != prior_.layer_dims) throw InputError("submission shape differs from the global model");
            players_.push_back(org);
            models_.push_back(std::move(model));
        }
        prior_loss_ = loss(prior_, server_test);
    }

    ModelUtilityGame(const ModelUtilityGame&) = delete;
    ModelUtilityGame& operator=(const ModelUtilityGame&) = delete;

    std::uint64_t round() const noexcept { return round_; }
    const ModelParams& prior_global() const noexcept { return prior_; }
    std::span<const OrgId> players() const noexcept { return players_; }
    const ModelParams& submission(std::size_t position) const { return models_.at(position); }
    double prior_loss() const noexcept { return prior_loss_; }

    /// Uniform average of the member models, in ascending player order.
    ModelParams average(Coalition c) const {
        std::vector<const ModelParams*> members;
        for (std::size_t p = 0; p < models_.size(); ++p)
            if (c >> p & 1) members.push_back(&models_[p]);
        return average_models(members);
    }

    double value(Coalition c) const {
        if (c == 0) return 0.0;
        if (c & ~full_coalition(players_.size())) throw InputError("coalition refers to unknown players");
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(c); it != cache_.end()) return it->second;
        }
        const double u = prior_loss_ - loss(average(c), *server_test_);
        std::lock_guard lock(mutex_);
        return cache_.try_emplace(c, u).first->second;
    }

    std::size_t cached_coalitions() const {
        std::lock_guard lock(mutex_);
        return cache_.size();
    }

private:
    std::uint64_t round_;
    ModelParams prior_;
    const Dataset* server_test_;
    std::vector<OrgId> players_;
    std::vector<ModelParams> models_;
    double prior_loss_ = 0.0;
    mutable std::mutex mutex_;
    mutable std::unordered_map<Coalition, double> cache_;
};

/// Bitmask for a set of organization ids.
template <CoalitionGame G>
Coalition coalition_of(const G& game, std::span<const OrgId> members) {
    const auto players = game.players();
    Coalition c = 0;
    for (OrgId id : members) {
        const auto it = std::lower_bound(players.begin(), players.end(), id);
        if (it == players.end() || *it != id) throw InputError("organization " + std::to_string(id) + " is not a player");
        c |= Coalition{1} << (it - players.begin());
    }
    return c;
}

template <CoalitionGame G>
double utility(const G& game, std::span<const OrgId> members) {
    return game.value(coalition_of(game, members));
}

enum class ShapleyMethod { exact, tmc };

struct ShapleyResult {
    std::map<OrgId, double> values;
    std::size_t num_evaluations = 0;
    ShapleyMethod method = ShapleyMethod::exact;
    std::map<OrgId, double> std_error;  // tmc only
    std::size_t permutations = 0;     // tmc only

    friend bool operator==(const ShapleyResult&, const ShapleyResult&) = default;
};

/// Enumerates all 2^N coalitions once and applies the weighted-marginal form.
template <CoalitionGame G>
ShapleyResult exact_shapley(const G& game) {
    const auto players = game.players();
    const std::size_t n = players.size();
    if (n > kExactShapleyMaxPlayers)
        throw CapacityError("exact Shapley over " + std::to_string(n) +
                            " players exceeds the enumeration guard of 20; use tmc_shapley");
    ShapleyResult result;
    result.method = ShapleyMethod::exact;
    if (n == 0) return result;

    const std::size_t total = std::size_t{1} << n;
    std::vector<double> u(total);
    for (Coalition c = 0; c < total; ++c) u[c] = game.value(c);
    result.num_evaluations = total;

    // weight[s] = 1 / (N * C(N-1, s))
    std::vector<double> binom(n, 1.0);
    for (std::size_t s = 1; s < n; ++s) binom[s] = binom[s - 1] * static_cast<double>(n - s) / static_cast<double>(s);
    std::vector<double> weight(n);
    for (std::size_t s = 0; s < n; ++s) weight[s] = 1.0 / (static_cast<double>(n) * binom[s]);

    for (std::size_t p = 0; p < n; ++p) {
        const Coalition bit = Coalition{1} << p;
        double v = 0.0;
        for (Coalition c = 0; c < total; ++c) {
            if (c & bit) continue;
            v += weight[static_cast<std::size_t>(std::popcount(c))] * (u[c | bit] - u[c]);
        }
        result.values[players[p]] = v;
    }
    return result;
}

struct TmcOptions {
    double truncation_tol = 1e-4;
    std::size_t max_permutations = 1000;
    double convergence_tol = 1e-3;
    std::size_t stability_window = 10;
    std::uint64_t seed = 0;
};

/// Truncated Monte-Carlo Shapley: walks seeded random permutations, setting the
/// remaining marginals of a walk to zero once |U(I) - U(prefix)| < truncation_tol.
/// Stops after `stability_window` consecutive permutations whose largest change
/// in any running mean is below convergence_tol, or at max_permutations.
template <CoalitionGame G>
ShapleyResult tmc_shapley(const G& game, const TmcOptions& opt) {
    if (!(opt.truncation_tol >= 0.0)) throw InputError("truncation_tol must be non-negative");
    if (opt.max_permutations < 1) throw InputError("max_permutations must be at least 1");
    const auto players = game.players();
    const std::size_t n = players.size();
    ShapleyResult result;
    result.method = ShapleyMethod::tmc;
    if (n == 0) return result;
    if (n > 64) throw CapacityError("coalition bitmasks hold at most 64 players");

    const double grand = game.value(full_coalition(n));
    std::size_t evaluations = 1;

    std::vector<double> mean(n, 0.0), m2(n, 0.0), marginal(n, 0.0);
    std::vector<std::size_t> order(n);
    Rng rng(opt.seed);
    std::size_t stable = 0, done = 0;
    // A single player has exactly one ordering.
    const std::size_t limit = n == 1 ? 1 : opt.max_permutations;

    while (done < limit) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(std::span(order), rng);
        Coalition prefix = 0;
        double prev = 0.0;
        bool truncated = false;
        for (std::size_t p : order) {
            if (!truncated && std::abs(grand - prev) < opt.truncation_tol) truncated = true;
            if (truncated) {
                marginal[p] = 0.0;
            } else {
                prefix |= Coalition{1} << p;
                const double cur = game.value(prefix);
                ++evaluations;
                marginal[p] = cur - prev;
                prev = cur;
            }
        }
        ++done;
        double max_change = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const double delta = marginal[p] - mean[p];
            const double updated = mean[p] + delta / static_cast<double>(done);
            m2[p] += delta * (marginal[p] - updated);
            max_change = std::max(max_change, std::abs(updated - mean[p]));
            mean[p] = updated;
        }
        stable = (done > 1 && max_change < opt.convergence_tol) ? stable + 1 : 0;
        if (stable >= opt.stability_window) break;
    }

    for (std::size_t p = 0; p < n; ++p) {
        result.values[players[p]] = mean[p];
        const double var = done > 1 ? m2[p] / static_cast<double>(done - 1) : 0.0;
        result.std_error[players[p]] = std::sqrt(var / static_cast<double>(done));
    }
    result.num_evaluations = evaluations;
    result.permutations = done;
    return result;
}

struct AxiomReport {
    bool symmetry = true;
    std::vector<std::pair<OrgId, OrgId>> interchangeable_pairs;
    std::optional<std::pair<OrgId, OrgId>> symmetry_witness;  // first violating pair

    /// Zero-marginal players: U(S u {i}) = U(S) for every S; expect v_i = 0.
    bool null_player = true;
    std::vector<OrgId> null_players;
    /// Players whose marginal always equals U({i}); expect v_i = U({i}).
    bool dummy = true;
    std::vector<OrgId> dummy_players;
    std::optional<OrgId> dummy_witness;

    std::optional<bool> additivity;  // set only when a second game is supplied
    double additivity_residual = 0.0;

    bool all_hold() const { return symmetry && null_player && dummy && additivity.value_or(true); }
};

/// Verifies the symmetry, dummy and (optionally) additivity properties of an
/// exact result against full coalition scans of the game.
template <CoalitionGame G, CoalitionGame H = TabularGame>
AxiomReport check_axioms(const G& game, const ShapleyResult& result, double tol, const H* second = nullptr) {
    const auto players = game.players();
    const std::size_t n = players.size();
    if (n > kAxiomCheckMaxPlayers)
        throw CapacityError("axiom checks scan all coalitions and are limited to 12 players");
    const std::size_t total = std::size_t{1} << n;
    std::vector<double> u(total);
    for (Coalition c = 0; c < total; ++c) u[c] = game.value(c);
    auto v = [&](std::size_t p) { return result.values.at(players[p]); };

    AxiomReport rep;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const Coalition bi = Coalition{1} << i, bj = Coalition{1} << j;
            bool interchangeable = true;
            for (Coalition c = 0; c < total && interchangeable; ++c)
                if (!(c & (bi | bj)) && std::abs(u[c | bi] - u[c | bj]) > tol) interchangeable = false;
            if (!interchangeable) continue;
            rep.interchangeable_pairs.emplace_back(players[i], players[j]);
            if (std::abs(v(i) - v(j)) > tol && rep.symmetry) {
                rep.symmetry = false;
                rep.symmetry_witness = std::make_pair(players[i], players[j]);
            }
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        const Coalition bi = Coalition{1} << i;
        bool is_null = true, is_dummy = true;
        for (Coalition c = 0; c < total; ++c) {
            if (c & bi) continue;
            const double m = u[c | bi] - u[c];
            if (std::abs(m) > tol) is_null = false;
            if (std::abs(m - u[bi]) > tol) is_dummy = false;
        }
        if (is_null) {
            rep.null_players.push_back(players[i]);
            if (std::abs(v(i)) > tol) {
                rep.null_player = false;
                if (!rep.dummy_witness) rep.dummy_witness = players[i];
            }
        }
        if (is_dummy) {
            rep.dummy_players.push_back(players[i]);
            if (std::abs(v(i) - u[bi]) > tol) {
                rep.dummy = false;
                if (!rep.dummy_witness) rep.dummy_witness = players[i];
            }
        }
    }

    if (second) {
        const auto a = exact_shapley(game);
        const auto b = exact_shapley(*second);
        const auto ab = exact_shapley(sum_game(game, *second));
        double residual = 0.0;
        for (OrgId id : players) residual = std::max(residual, std::abs(ab.values.at(id) - a.values.at(id) - b.values.at(id)));
        rep.additivity_residual = residual;
        rep.additivity = residual <= tol;
    }
    return rep;
}

/// Per-organization sum of per-round values; absent organizations add 0.
inline std::map<OrgId, double> accumulate_contributions(std::span<const ShapleyResult> history) {
    std::map<OrgId, double> total;
    for (const auto& round : history)
        for (const auto& [org, v] : round.values) total[org] += v;
    return total;
}

}  // namespace bdsp
