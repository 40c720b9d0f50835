#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bdsp/errors.hpp"

namespace bdsp {

/// One fixed-width feature row. Label 1 is the minority (fraud) class.
struct Example {
    std::vector<double> features;
    int label = 0;

    friend bool operator==(const Example&, const Example&) = default;
};

/// Per-column affine map to zero mean / unit variance.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    void apply(Example& ex) const {
        for (std::size_t j = 0; j < ex.features.size(); ++j)
            ex.features[j] = (ex.features[j] - mean[j]) / scale[j];
    }
};

/// Ordered collection of examples sharing one schema width.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::size_t width) : width_(width) {}

    Dataset(std::size_t width, std::vector<Example> examples) : width_(width) {
        examples_.reserve(examples.size());
        for (auto& ex : examples) push_back(std::move(ex));
    }

    void push_back(Example ex) {
        if (ex.features.size() != width_)
            throw InputError("example has " + std::to_string(ex.features.size()) +
                             " features, dataset width is " + std::to_string(width_));
        if (ex.label != 0 && ex.label != 1) throw InputError("label must be 0 or 1");
        for (double v : ex.features)
            if (!std::isfinite(v)) throw InputError("non-finite feature value");
        examples_.push_back(std::move(ex));
    }

    void reserve(std::size_t n) { examples_.reserve(n); }

    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return examples_.size(); }
    bool empty() const noexcept { return examples_.empty(); }

    const Example& operator[](std::size_t i) const { return examples_[i]; }
    const std::vector<Example>& examples() const noexcept { return examples_; }

    auto begin() const noexcept { return examples_.begin(); }
    auto end() const noexcept { return examples_.end(); }

    /// Subset in the given index order.
    Dataset select(const std::vector<std::size_t>& indices) const {
        Dataset out(width_);
        out.examples_.reserve(indices.size());
        for (std::size_t i : indices) out.examples_.push_back(examples_.at(i));
        out.standardizer = standardizer;
        return out;
    }

    std::size_t count_label(int label) const noexcept {
        std::size_t n = 0;
        for (const auto& ex : examples_) n += ex.label == label ? 1 : 0;
        return n;
    }

    /// Parameters used to standardize this data, when it was standardized.
    std::optional<Standardizer> standardizer;

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.width_ == b.width_ && a.examples_ == b.examples_;
    }

private:
    std::size_t width_ = 0;
    std::vector<Example> examples_;
};

}  // namespace bdsp
