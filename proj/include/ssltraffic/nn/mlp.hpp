#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/losses.hpp"
#include "ssltraffic/nn/matrix.hpp"
#include "ssltraffic/rng.hpp"

namespace ssltraffic::nn {

enum class Activation { relu, linear, softmax };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::linear: return "linear";
        case Activation::softmax: return "softmax";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    if (s == "softmax") return Activation::softmax;
    throw ConfigError("unknown activation '" + s + "'");
}

/// Dense layer y = act(x W + b). `weight` is (in x out). `dropout` applies to
/// the layer's output in train mode (inverted dropout).
struct Layer {
    Matrix weight;
    std::vector<double> bias;
    Activation activation = Activation::linear;
    double dropout = 0.0;
    bool trainable = true;

    std::size_t in_width() const noexcept { return weight.rows(); }
    std::size_t out_width() const noexcept { return weight.cols(); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

struct MlpModel {
    std::vector<Layer> layers;
    /// Bumped on every parameter update; forward caches record it.
    std::uint64_t version = 0;

    std::size_t in_width() const { return layers.front().in_width(); }
    std::size_t out_width() const { return layers.back().out_width(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    void set_trainable(bool on) {
        for (auto& l : layers) l.trainable = on;
    }

    void validate() const {
        if (layers.empty()) throw ConfigError("MLP needs at least one layer");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.bias.size() != l.out_width())
                throw DimensionError("layer " + std::to_string(i) + ": bias width mismatch");
            if (!(l.dropout >= 0.0 && l.dropout < 1.0))
                throw ConfigError("layer " + std::to_string(i) + ": dropout outside [0,1)");
            if (i > 0 && layers[i - 1].out_width() != l.in_width())
                throw DimensionError("layer " + std::to_string(i) + ": input width " +
                                     std::to_string(l.in_width()) + " != previous output " +
                                     std::to_string(layers[i - 1].out_width()));
        }
    }

    /// Parameters only; the version counter is bookkeeping.
    friend bool operator==(const MlpModel& a, const MlpModel& b) { return a.layers == b.layers; }
};

/// He-uniform initialised dense layer, zero bias.
inline Layer make_layer(std::size_t in, std::size_t out, Activation act, double dropout, Rng& rng) {
    Layer l{Matrix(in, out), std::vector<double>(out, 0.0), act, dropout, true};
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    for (double& w : l.weight.data()) w = (2.0 * uniform01(rng) - 1.0) * limit;
    return l;
}

/// in -> hidden... (relu, dropout) -> out (output_activation, no dropout).
inline MlpModel make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
                         Activation output_activation, double dropout, Rng& rng) {
    MlpModel m;
    std::size_t width = in;
    for (std::size_t h : hidden) {
        m.layers.push_back(make_layer(width, h, Activation::relu, dropout, rng));
        width = h;
    }
    m.layers.push_back(make_layer(width, out, output_activation, 0.0, rng));
    m.validate();
    return m;
}

/// Layers of `a` followed by layers of `b`.
inline MlpModel concat(const MlpModel& a, const MlpModel& b) {
    MlpModel m;
    m.layers = a.layers;
    m.layers.insert(m.layers.end(), b.layers.begin(), b.layers.end());
    m.validate();
    return m;
}

/// Layers [begin, end) as their own model.
inline MlpModel slice_layers(const MlpModel& m, std::size_t begin, std::size_t end) {
    MlpModel out;
    out.layers.assign(m.layers.begin() + static_cast<std::ptrdiff_t>(begin),
                      m.layers.begin() + static_cast<std::ptrdiff_t>(end));
    out.validate();
    return out;
}

struct ForwardCache {
    const MlpModel* model = nullptr;
    std::uint64_t version = 0;
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> pre;          // pre-activation of each layer
    std::vector<Matrix> masks;        // scaled dropout mask per layer (empty if none)

    /// Pre-activation of the final layer (the logits for classifier heads).
    const Matrix& logits() const { return pre.back(); }
};

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

struct Gradients {
    std::vector<Matrix> weight;
    std::vector<std::vector<double>> bias;
    Matrix input;  // dL/d(batch); filled only when requested

    static Gradients zeros_like(const MlpModel& m) {
        Gradients g;
        for (const auto& l : m.layers) {
            g.weight.emplace_back(l.weight.rows(), l.weight.cols());
            g.bias.emplace_back(l.bias.size(), 0.0);
        }
        return g;
    }
};

namespace detail {
inline void apply_activation(Matrix& m, Activation act) {
    switch (act) {
        case Activation::relu:
            for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::linear:
            break;
        case Activation::softmax:
            m = softmax(m);
            break;
    }
}

inline Matrix affine(const Matrix& x, const Layer& l) {
    Matrix z = matmul(x, l.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += l.bias[c];
    }
    return z;
}
}  // namespace detail

/// Forward pass. Dropout is drawn from `rng` only when `train_mode` is set.
inline ForwardResult forward(const MlpModel& model, const Matrix& batch, bool train_mode, Rng& rng) {
    if (model.layers.empty()) throw ConfigError("forward: empty model");
    if (batch.cols() != model.in_width())
        throw DimensionError("forward: batch width " + std::to_string(batch.cols()) +
                             " != model input width " + std::to_string(model.in_width()));
    ForwardResult res;
    res.cache.model = &model;
    res.cache.version = model.version;
    Matrix x = batch;
    for (const auto& l : model.layers) {
        res.cache.inputs.push_back(x);
        Matrix z = detail::affine(x, l);
        res.cache.pre.push_back(z);
        detail::apply_activation(z, l.activation);
        Matrix mask;
        if (train_mode && l.dropout > 0.0 && l.activation != Activation::softmax) {
            mask = Matrix(z.rows(), z.cols());
            const double keep = 1.0 - l.dropout;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double m = uniform01(rng) < keep ? 1.0 / keep : 0.0;
                mask.data()[i] = m;
                z.data()[i] *= m;
            }
        }
        res.cache.masks.push_back(std::move(mask));
        x = std::move(z);
    }
    res.output = std::move(x);
    return res;
}

/// Inference-mode forward without a cache.
inline Matrix predict(const MlpModel& model, const Matrix& batch) {
    if (batch.cols() != model.in_width())
        throw DimensionError("predict: batch width " + std::to_string(batch.cols()) +
                             " != model input width " + std::to_string(model.in_width()));
    Matrix x = batch;
    for (const auto& l : model.layers) {
        x = detail::affine(x, l);
        detail::apply_activation(x, l.activation);
    }
    return x;
}

/// Backpropagates `loss_grad` (dL/d output). For a softmax-tagged final layer
/// `loss_grad` is taken as dL/d logits, matching the losses in losses.hpp.
/// Frozen layers get zero gradients.
inline Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& loss_grad,
                          bool want_input_grad = false) {
    if (cache.model != &model || cache.version != model.version ||
        cache.inputs.size() != model.layers.size())
        throw StateError("backward: forward cache does not belong to the current model state");
    if (loss_grad.rows() != cache.pre.back().rows() || loss_grad.cols() != model.out_width())
        throw DimensionError("backward: loss gradient shape mismatch");

    Gradients grads = Gradients::zeros_like(model);
    std::size_t lowest_needed = model.layers.size();
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        if (model.layers[i].trainable) {
            lowest_needed = i;
            break;
        }
    if (want_input_grad) lowest_needed = 0;
    if (lowest_needed == model.layers.size()) return grads;

    Matrix g = loss_grad;
    for (std::size_t li = model.layers.size(); li-- > lowest_needed;) {
        const Layer& l = model.layers[li];
        if (!cache.masks[li].empty())
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= cache.masks[li].data()[i];
        if (l.activation == Activation::relu) {
            const auto& z = cache.pre[li].data();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!(z[i] > 0.0)) g.data()[i] = 0.0;
        }
        if (l.trainable) {
            grads.weight[li] = matmul_tn(cache.inputs[li], g);
            auto& gb = grads.bias[li];
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const auto row = g.row(r);
                for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
            }
        }
        if (li > lowest_needed || want_input_grad) g = matmul_nt(g, l.weight);
    }
    if (want_input_grad) grads.input = std::move(g);
    return grads;
}

}  // namespace ssltraffic::nn
