#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bdsp/dataset.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/random.hpp"

namespace bdsp {

/// Credit-card transaction schema: Time, V1..V28, Amount, then Class.
inline constexpr std::size_t kCreditCardWidth = 30;

inline std::vector<std::string> credit_card_columns() {
    std::vector<std::string> cols{"Time"};
    for (int i = 1; i <= 28; ++i) cols.push_back("V" + std::to_string(i));
    cols.push_back("Amount");
    cols.push_back("Class");
    return cols;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace detail

/// Parses a credit-card-schema CSV without standardizing. Rows and columns in
/// error messages are 1-based; row 1 is the header.
inline Dataset read_csv_raw(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header row", 1, 0);
    const auto header = detail::split_fields(line);
    const auto expected = credit_card_columns();
    if (header.size() != expected.size())
        throw ParseError("header has " + std::to_string(header.size()) + " columns, expected " +
                             std::to_string(expected.size()),
                         1, header.size());
    for (std::size_t c = 0; c < expected.size(); ++c)
        if (detail::trim(header[c]) != expected[c])
            throw ParseError("header column '" + std::string(detail::trim(header[c])) + "' should be '" +
                                 expected[c] + "'",
                             1, c + 1);

    Dataset data(kCreditCardWidth);
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != expected.size())
            throw ParseError("row has " + std::to_string(fields.size()) + " fields, expected " +
                                 std::to_string(expected.size()),
                             row, fields.size());
        Example ex;
        ex.features.resize(kCreditCardWidth);
        for (std::size_t c = 0; c < kCreditCardWidth; ++c) {
            const auto v = detail::parse_double(fields[c]);
            if (!v) throw ParseError("non-numeric cell '" + std::string(fields[c]) + "'", row, c + 1);
            ex.features[c] = *v;
        }
        const auto label = detail::parse_double(fields[kCreditCardWidth]);
        if (!label || (*label != 0.0 && *label != 1.0))
            throw ParseError("Class must be 0 or 1", row, kCreditCardWidth + 1);
        ex.label = static_cast<int>(*label);
        data.push_back(std::move(ex));
    }
    return data;
}

inline Dataset read_csv_raw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    return read_csv_raw(in);
}

/// Column statistics of data; zero-variance columns get scale 1.
inline Standardizer fit_standardizer(const Dataset& data) {
    Standardizer s;
    const std::size_t w = data.width();
    s.mean.assign(w, 0.0);
    s.scale.assign(w, 1.0);
    if (data.empty()) return s;
    const double n = static_cast<double>(data.size());
    for (const auto& ex : data)
        for (std::size_t j = 0; j < w; ++j) s.mean[j] += ex.features[j];
    for (double& m : s.mean) m /= n;
    std::vector<double> var(w, 0.0);
    for (const auto& ex : data)
        for (std::size_t j = 0; j < w; ++j) {
            const double d = ex.features[j] - s.mean[j];
            var[j] += d * d;
        }
    for (std::size_t j = 0; j < w; ++j) {
        const double sd = std::sqrt(var[j] / n);
        s.scale[j] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

inline Dataset standardize(const Dataset& data, const Standardizer& s) {
    Dataset out(data.width());
    out.reserve(data.size());
    for (Example ex : data) {
        s.apply(ex);
        out.push_back(std::move(ex));
    }
    out.standardizer = s;
    return out;
}

inline Dataset standardize(const Dataset& data) { return standardize(data, fit_standardizer(data)); }

/// Reads and standardizes a credit-card CSV; the fitted parameters are kept
/// on the returned dataset.
inline Dataset load_csv(const std::string& path) { return standardize(read_csv_raw(path)); }

inline void write_csv(std::ostream& out, const Dataset& data) {
    const auto cols = credit_card_columns();
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
    out << '\n';
    char buf[64];
    for (const auto& ex : data) {
        for (double v : ex.features) {
            const auto res = std::to_chars(buf, buf + sizeof buf, v);
            out.write(buf, res.ptr - buf);
            out << ',';
        }
        out << ex.label << '\n';
    }
}

struct ImbalanceStats {
    std::size_t minority_count = 0;
    double ratio = 0.0;  // fraction of label-1 examples
};

inline ImbalanceStats imbalance_stats(const Dataset& data) {
    ImbalanceStats s;
    s.minority_count = data.count_label(1);
    s.ratio = data.empty() ? 0.0 : static_cast<double>(s.minority_count) / static_cast<double>(data.size());
    return s;
}

/// Stratified split; each class contributes round(train_fraction * n_c)
/// examples to the training half, clamped so both halves keep one of each
/// class. Both halves preserve the input order.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train_fraction must lie in (0, 1)");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
    for (int c = 0; c < 2; ++c)
        if (by_class[c].size() < 2)
            throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                                      " examples; stratified split needs at least 2");

    Rng rng(seed);
    std::vector<char> in_train(data.size(), 0);
    for (auto& idx : by_class) {
        shuffle(std::span(idx), rng);
        auto take = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size()) + 0.5));
        take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
        for (std::size_t k = 0; k < take; ++k) in_train[idx[k]] = 1;
    }
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < data.size(); ++i) (in_train[i] ? train_idx : test_idx).push_back(i);
    return {data.select(train_idx), data.select(test_idx)};
}

enum class PartitionMode { iid, label_skew };

struct PartitionPlan {
    std::size_t num_orgs = 30;
    PartitionMode mode = PartitionMode::iid;
    double skew = 0.0;  // label_skew: fraction of minority examples sent to the first ceil(num_orgs/3) shards
    std::uint64_t seed = 0;
};

/// Index-level partition; each shard's indices are ascending.
inline std::vector<std::vector<std::size_t>> partition_indices(const Dataset& data, const PartitionPlan& plan) {
    if (plan.num_orgs == 0) throw InputError("num_orgs must be positive");
    if (plan.num_orgs > data.size())
        throw InputError("cannot partition " + std::to_string(data.size()) + " examples across " +
                         std::to_string(plan.num_orgs) + " organizations");
    if (!(plan.skew >= 0.0 && plan.skew <= 1.0)) throw InputError("skew must lie in [0, 1]");

    Rng rng(plan.seed);
    std::vector<std::vector<std::size_t>> shards(plan.num_orgs);
    const std::size_t k = plan.num_orgs;

    if (plan.mode == PartitionMode::iid) {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(std::span(order), rng);
        const std::size_t base = order.size() / k, extra = order.size() % k;
        std::size_t pos = 0;
        for (std::size_t s = 0; s < k; ++s) {
            const std::size_t len = base + (s < extra ? 1 : 0);
            shards[s].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                             order.begin() + static_cast<std::ptrdiff_t>(pos + len));
            pos += len;
        }
    } else {
        std::vector<std::size_t> minority, rest;
        for (std::size_t i = 0; i < data.size(); ++i) (data[i].label == 1 ? minority : rest).push_back(i);
        shuffle(std::span(minority), rng);
        const std::size_t concentrated =
            static_cast<std::size_t>(std::floor(plan.skew * static_cast<double>(minority.size()) + 0.5));
        const std::size_t groups = (k + 2) / 3;
        for (std::size_t m = 0; m < concentrated; ++m) shards[m % groups].push_back(minority[m]);
        rest.insert(rest.end(), minority.begin() + static_cast<std::ptrdiff_t>(concentrated), minority.end());
        shuffle(std::span(rest), rng);
        // Fill the smallest shard first so sizes stay balanced; ties go to the lower index.
        for (std::size_t idx : rest) {
            std::size_t target = 0;
            for (std::size_t s = 1; s < k; ++s)
                if (shards[s].size() < shards[target].size()) target = s;
            shards[target].push_back(idx);
        }
    }
    for (auto& s : shards) std::sort(s.begin(), s.end());
    return shards;
}

inline std::vector<Dataset> partition(const Dataset& data, const PartitionPlan& plan) {
    std::vector<Dataset> out;
    for (const auto& idx : partition_indices(data, plan)) out.push_back(data.select(idx));
    return out;
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// The k nearest label-1 examples to data[point_index] by Euclidean distance,
/// excluding the point itself. Ties go to the lower index.
inline std::vector<std::size_t> knn_minority(const Dataset& data, std::size_t point_index, std::size_t k) {
    if (point_index >= data.size()) throw InputError("point_index out of range");
    if (data[point_index].label != 1) throw InputError("knn_minority query must be a minority example");
    if (k == 0) throw InputError("k must be positive");
    const std::size_t minority = data.count_label(1);
    if (k >= minority)
        throw InputError("k=" + std::to_string(k) + " needs more than " + std::to_string(minority) +
                         " minority examples");

    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(minority - 1);
    const auto& q = data[point_index].features;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (i != point_index && data[i].label == 1) cand.emplace_back(detail::squared_distance(q, data[i].features), i);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = cand[j].second;
    return out;
}

struct SmoteConfig {
    std::size_t k = 5;
    double target_ratio = 1.0;  // desired minority/majority after synthesis
    std::uint64_t seed = 0;
    std::optional<double> fixed_gap = std::nullopt;  // pins the interpolation factor instead of drawing it
};

/// Provenance of one synthetic example (indices refer to the input dataset).
struct SmoteSample {
    std::size_t parent = 0;
    std::size_t neighbor = 0;
    double gap = 0.0;
};

/// Appends synthetic minority examples x + (neighbor - x) * gap, walking the
/// minority examples round-robin until minority/majority >= target_ratio.
/// The input examples are kept unchanged and in order at the front.
inline Dataset smote(const Dataset& data, const SmoteConfig& cfg, std::vector<SmoteSample>* trace = nullptr) {
    if (!(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0)) throw InputError("target_ratio must lie in (0, 1]");
    if (cfg.fixed_gap && !(*cfg.fixed_gap >= 0.0 && *cfg.fixed_gap <= 1.0))
        throw InputError("fixed_gap must lie in [0, 1]");
    std::vector<std::size_t> minority;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i].label == 1) minority.push_back(i);
    if (cfg.k == 0 || minority.size() <= cfg.k)
        throw InputError("smote needs more than k=" + std::to_string(cfg.k) + " minority examples, found " +
                         std::to_string(minority.size()));

    const std::size_t majority = data.size() - minority.size();
    const auto wanted = static_cast<std::size_t>(std::ceil(cfg.target_ratio * static_cast<double>(majority)));
    const std::size_t to_make = wanted > minority.size() ? wanted - minority.size() : 0;

    Dataset out = data;
    out.reserve(data.size() + to_make);
    if (trace) trace->clear();
    if (to_make == 0) return out;

    std::vector<std::vector<std::size_t>> neighbors(minority.size());
    for (std::size_t m = 0; m < minority.size(); ++m) neighbors[m] = knn_minority(data, minority[m], cfg.k);

    Rng rng(cfg.seed);
    for (std::size_t s = 0; s < to_make; ++s) {
        const std::size_t m = s % minority.size();
        const std::size_t parent = minority[m];
        const std::size_t nb = neighbors[m][uniform_index(rng, cfg.k)];
        const double gap = cfg.fixed_gap ? *cfg.fixed_gap : uniform_closed01(rng);
        Example ex;
        ex.label = 1;
        ex.features.resize(data.width());
        const auto& x = data[parent].features;
        const auto& y = data[nb].features;
        for (std::size_t j = 0; j < x.size(); ++j) ex.features[j] = x[j] + (y[j] - x[j]) * gap;
        out.push_back(std::move(ex));
        if (trace) trace->push_back({parent, nb, gap});
    }
    return out;
}

/// Two-Gaussian stand-in for the credit-card data: identity covariance,
/// majority centred at 0, minority shifted by `separation` along the all-ones
/// diagonal. Exactly round(n * minority_fraction) rows carry label 1.
struct SyntheticSpec {
    std::size_t n = 2000;
    std::size_t width = kCreditCardWidth;
    double minority_fraction = 0.02;
    double separation = 3.0;
    std::uint64_t seed = 0;
};

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (!(spec.minority_fraction > 0.0 && spec.minority_fraction < 0.5))
        throw InputError("minority fraction must lie in (0, 0.5)");
    if (spec.n == 0 || spec.width == 0) throw InputError("synthetic data needs n > 0 and width > 0");
    const auto positives =
        static_cast<std::size_t>(std::floor(spec.minority_fraction * static_cast<double>(spec.n) + 0.5));
    std::vector<int> labels(spec.n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
    Rng rng(spec.seed);
    shuffle(std::span(labels), rng);

    const double shift = spec.separation / std::sqrt(static_cast<double>(spec.width));
    Dataset data(spec.width);
    data.reserve(spec.n);
    for (int label : labels) {
        Example ex;
        ex.label = label;
        ex.features.resize(spec.width);
        for (double& v : ex.features) v = standard_normal(rng) + (label == 1 ? shift : 0.0);
        data.push_back(std::move(ex));
    }
    return data;
}

}  // namespace bdsp
