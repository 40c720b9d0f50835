#pragma once

// Independent oracles shared by the unit and acceptance suites. None of these
// call into the code paths they are used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "bdsp/bdsp.hpp"

namespace bdsp::testing {

/// Shapley values by averaging marginal contributions over all N! orderings.
template <class G>
std::map<OrgId, double> permutation_shapley(const G& game) {
    const auto players = game.players();
    const std::size_t n = players.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> sum(n, 0.0);
    std::size_t count = 0;
    do {
        Coalition prefix = 0;
        double prev = game.value(0);
        for (std::size_t p : order) {
            prefix |= Coalition{1} << p;
            const double cur = game.value(prefix);
            sum[p] += cur - prev;
            prev = cur;
        }
        ++count;
    } while (std::next_permutation(order.begin(), order.end()));
    std::map<OrgId, double> out;
    for (std::size_t p = 0; p < n; ++p) out[players[p]] = sum[p] / static_cast<double>(count);
    return out;
}

/// Game with utilities drawn uniformly from [-1, 1] (U(empty) = 0).
inline TabularGame random_game(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<OrgId> players(n);
    std::iota(players.begin(), players.end(), OrgId{0});
    return TabularGame::from_function(players, [&](Coalition) { return uniform_real(rng, -1.0, 1.0); });
}

/// Central finite-difference gradient of loss(params, data, weight_decay).
inline std::vector<double> numeric_gradient(const ModelParams& params, const Dataset& data, double weight_decay,
                                            double step = 1e-5) {
    std::vector<double> g(params.weights.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        ModelParams plus = params, minus = params;
        plus.weights[k] += step;
        minus.weights[k] -= step;
        g[k] = (loss(plus, data, weight_decay) - loss(minus, data, weight_decay)) / (2.0 * step);
    }
    return g;
}

/// Largest per-component relative error; components where both values are
/// below `floor` in magnitude are compared relative to `floor`.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double scale = std::max({std::abs(a[k]), std::abs(b[k]), floor});
        worst = std::max(worst, std::abs(a[k] - b[k]) / scale);
    }
    return worst;
}

inline ModelParams random_model(std::vector<std::size_t> dims, std::uint64_t seed, double scale = 1.0) {
    ModelParams p = zero_model(std::move(dims));
    Rng rng(seed);
    for (double& w : p.weights) w = uniform_real(rng, -scale, scale);
    return p;
}

inline Dataset random_dataset(std::size_t n, std::size_t width, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d(width);
    for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        ex.features.resize(width);
        for (double& v : ex.features) v = standard_normal(rng);
        ex.label = uniform01(rng) < 0.5 ? 1 : 0;
        d.push_back(std::move(ex));
    }
    return d;
}

/// Two Gaussian blobs far apart: label = (x0 > 0).
inline Dataset separable_dataset(std::size_t n, std::size_t width, std::uint64_t seed, double minority_fraction = 0.5) {
    Rng rng(seed);
    Dataset d(width);
    for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        ex.label = uniform01(rng) < minority_fraction ? 1 : 0;
        ex.features.resize(width);
        for (double& v : ex.features) v = 0.3 * standard_normal(rng);
        ex.features[0] += ex.label == 1 ? 2.0 : -2.0;
        d.push_back(std::move(ex));
    }
    return d;
}

inline Example row(std::vector<double> features, int label) { return Example{std::move(features), label}; }

}  // namespace bdsp::testing
