#pragma once

// Fully connected binary classifier over a flat parameter vector: ReLU hidden
// layers, a single sigmoid output, BCE loss with optional L2 penalty, and
// mini-batch SGD. Every function takes ModelParams by value or const
// reference; nothing here holds state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bdsp/dataset.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/random.hpp"

namespace bdsp {

inline constexpr double kProbabilityClamp = 1e-12;

struct ModelParams {
    std::vector<std::size_t> layer_dims;
    std::vector<double> weights;
    std::uint64_t version = 0;

    /// Weights of each layer are stored row-major (out x in) followed by the bias.
    static std::size_t parameter_count(std::span<const std::size_t> dims) {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l + 1] * dims[l] + dims[l + 1];
        return n;
    }

    std::size_t input_width() const { return layer_dims.empty() ? 0 : layer_dims.front(); }

    bool all_finite() const {
        return std::all_of(weights.begin(), weights.end(), [](double w) { return std::isfinite(w); });
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline void validate_layer_dims(std::span<const std::size_t> dims) {
    if (dims.size() < 2) throw InputError("a model needs at least an input and an output layer");
    for (std::size_t d : dims)
        if (d == 0) throw InputError("layer widths must be positive");
    if (dims.back() != 1) throw InputError("output layer width must be 1");
}

inline void validate_params(const ModelParams& p) {
    validate_layer_dims(p.layer_dims);
    if (p.weights.size() != ModelParams::parameter_count(p.layer_dims))
        throw InputError("weight count " + std::to_string(p.weights.size()) + " does not match layer_dims");
}

inline ModelParams zero_model(std::vector<std::size_t> dims) {
    validate_layer_dims(dims);
    ModelParams p;
    p.weights.assign(ModelParams::parameter_count(dims), 0.0);
    p.layer_dims = std::move(dims);
    return p;
}

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline ModelParams init_model(std::vector<std::size_t> dims, std::uint64_t seed) {
    ModelParams p = zero_model(std::move(dims));
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
        const std::size_t in = p.layer_dims[l], out = p.layer_dims[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::size_t k = 0; k < in * out; ++k) p.weights[off + k] = uniform_real(rng, -bound, bound);
        off += in * out + out;
    }
    return p;
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double weight_decay = 0.001;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
        if (epochs < 1) throw InputError("epochs must be at least 1");
        if (batch_size < 1) throw InputError("batch_size must be at least 1");
        if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be non-negative");
    }
};

struct Metrics {
    double accuracy = 0.0;
    double loss = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

namespace detail {

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    std::vector<std::vector<double>> pre;   // pre-activations per layer
    std::vector<std::vector<double>> post;  // activations, post[0] is the input copy
    std::vector<double> delta, next_delta;

    explicit Workspace(const ModelParams& p) {
        const std::size_t layers = p.layer_dims.size() - 1;
        pre.resize(layers);
        post.resize(layers + 1);
        for (std::size_t l = 0; l <= layers; ++l) post[l].resize(p.layer_dims[l]);
        for (std::size_t l = 0; l < layers; ++l) pre[l].resize(p.layer_dims[l + 1]);
    }
};

inline double forward(const ModelParams& p, std::span<const double> x, Workspace& ws) {
    const std::size_t layers = p.layer_dims.size() - 1;
    std::copy(x.begin(), x.end(), ws.post[0].begin());
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = p.layer_dims[l], out = p.layer_dims[l + 1];
        const double* w = p.weights.data() + off;
        const double* b = w + in * out;
        const auto& a = ws.post[l];
        for (std::size_t o = 0; o < out; ++o) {
            double z = b[o];
            const double* row = w + o * in;
            for (std::size_t i = 0; i < in; ++i) z += row[i] * a[i];
            ws.pre[l][o] = z;
            ws.post[l + 1][o] = (l + 1 < layers) ? std::max(z, 0.0) : z;
        }
        off += in * out + out;
    }
    return ws.pre[layers - 1][0];
}

inline std::vector<std::size_t> layer_offsets(const ModelParams& p) {
    std::vector<std::size_t> offs;
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
        offs.push_back(off);
        off += p.layer_dims[l + 1] * p.layer_dims[l] + p.layer_dims[l + 1];
    }
    return offs;
}

/// Adds d(BCE)/dw for one example into grad.
inline void backward(const ModelParams& p, const std::vector<std::size_t>& offs, double dlogit, Workspace& ws,
                     std::vector<double>& grad) {
    const std::size_t layers = p.layer_dims.size() - 1;
    ws.delta.assign(1, dlogit);
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = p.layer_dims[l], out = p.layer_dims[l + 1];
        double* gw = grad.data() + offs[l];
        double* gb = gw + in * out;
        const auto& a = ws.post[l];
        for (std::size_t o = 0; o < out; ++o) {
            const double d = ws.delta[o];
            if (d == 0.0) continue;
            double* row = gw + o * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
            gb[o] += d;
        }
        if (l == 0) break;
        const double* w = p.weights.data() + offs[l];
        ws.next_delta.assign(in, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            const double d = ws.delta[o];
            if (d == 0.0) continue;
            const double* row = w + o * in;
            for (std::size_t i = 0; i < in; ++i) ws.next_delta[i] += row[i] * d;
        }
        for (std::size_t i = 0; i < in; ++i)
            if (ws.pre[l - 1][i] <= 0.0) ws.next_delta[i] = 0.0;
        ws.delta.swap(ws.next_delta);
    }
}

inline double bce(double p, int label) {
    const double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

inline double l2_squared(const std::vector<double>& w) {
    double s = 0.0;
    for (double v : w) s += v * v;
    return s;
}

inline void check_width(const ModelParams& p, std::size_t width) {
    if (width != p.input_width())
        throw InputError("feature width " + std::to_string(width) + " does not match model input width " +
                         std::to_string(p.input_width()));
}

/// Mean BCE gradient over data[indices], visited in the given order.
inline std::vector<double> batch_gradient(const ModelParams& p, const Dataset& data,
                                          std::span<const std::size_t> indices, double weight_decay) {
    std::vector<double> grad(p.weights.size(), 0.0);
    Workspace ws(p);
    const auto offs = layer_offsets(p);
    for (std::size_t idx : indices) {
        const Example& ex = data[idx];
        const double prob = sigmoid(forward(p, ex.features, ws));
        backward(p, offs, prob - static_cast<double>(ex.label), ws, grad);
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = grad[k] * inv + weight_decay * p.weights[k];
    return grad;
}

}  // namespace detail

/// Uniform element-wise mean, accumulated in the order given.
inline ModelParams average_models(std::span<const ModelParams* const> models) {
    if (models.empty()) throw InputError("average of zero models");
    ModelParams avg = *models.front();
    for (std::size_t i = 1; i < models.size(); ++i) {
        if (models[i]->weights.size() != avg.weights.size()) throw InputError("averaged models differ in shape");
        for (std::size_t k = 0; k < avg.weights.size(); ++k) avg.weights[k] += models[i]->weights[k];
    }
    const double inv = 1.0 / static_cast<double>(models.size());
    for (double& w : avg.weights) w *= inv;
    return avg;
}

/// Sigmoid output probability for one feature row.
inline double predict(const ModelParams& params, std::span<const double> features) {
    validate_params(params);
    detail::check_width(params, features.size());
    detail::Workspace ws(params);
    return sigmoid(detail::forward(params, features, ws));
}

/// Mean BCE over data, plus weight_decay/2 * ||w||^2 when weight_decay > 0.
inline double loss(const ModelParams& params, const Dataset& data, double weight_decay = 0.0) {
    if (data.empty()) throw InputError("loss of an empty dataset");
    validate_params(params);
    detail::check_width(params, data.width());
    detail::Workspace ws(params);
    double total = 0.0;
    for (const Example& ex : data) total += detail::bce(sigmoid(detail::forward(params, ex.features, ws)), ex.label);
    double value = total / static_cast<double>(data.size());
    if (weight_decay > 0.0) value += 0.5 * weight_decay * detail::l2_squared(params.weights);
    return value;
}

/// Gradient of loss(params, batch, weight_decay) with respect to the weights.
inline std::vector<double> gradient(const ModelParams& params, const Dataset& batch, double weight_decay = 0.0) {
    if (batch.empty()) throw InputError("gradient of an empty batch");
    validate_params(params);
    detail::check_width(params, batch.width());
    std::vector<std::size_t> all(batch.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return detail::batch_gradient(params, batch, all, weight_decay);
}

/// Mini-batch SGD: epochs x ceil(|data|/batch_size) steps over a per-epoch
/// seeded shuffle. Within a batch, examples are accumulated in dataset order,
/// so a full batch reproduces gradient(params, data) exactly.
inline ModelParams local_train(ModelParams params, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw InputError("local_train on an empty dataset");
    validate_params(params);
    detail::check_width(params, data.width());

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::vector<std::size_t> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(std::span(order), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::sort(batch.begin(), batch.end());
            const auto grad = detail::batch_gradient(params, data, batch, cfg.weight_decay);
            for (std::size_t k = 0; k < grad.size(); ++k) params.weights[k] -= cfg.learning_rate * grad[k];
        }
    }
    return params;
}

inline Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn, double mean_loss) {
    Metrics m;
    const double n = static_cast<double>(tp + fp + fn + tn);
    m.accuracy = n > 0 ? static_cast<double>(tp + tn) / n : 0.0;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.loss = mean_loss;
    return m;
}

/// Confusion-matrix metrics with label 1 as the positive class. Precision and
/// F1 are 0 when their denominators vanish.
inline Metrics evaluate(const ModelParams& params, const Dataset& data, double threshold = 0.5) {
    if (data.empty()) throw InputError("evaluate on an empty dataset");
    if (!(threshold > 0.0 && threshold < 1.0)) throw InputError("threshold must lie in (0, 1)");
    validate_params(params);
    detail::check_width(params, data.width());

    detail::Workspace ws(params);
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double total = 0.0;
    for (const Example& ex : data) {
        const double prob = sigmoid(detail::forward(params, ex.features, ws));
        total += detail::bce(prob, ex.label);
        const bool positive = prob >= threshold;
        if (positive && ex.label == 1) ++tp;
        else if (positive) ++fp;
        else if (ex.label == 1) ++fn;
        else ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn, total / static_cast<double>(data.size()));
}


}  // namespace bdsp
