#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssltraffic/nn/mlp.hpp"

namespace ssltraffic::nn {

struct AdamOptions {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam moments for one model. L2 weight decay is folded into the gradient
/// (coupled), as in the classic Adam formulation.
struct AdamState {
    AdamOptions opts;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m_w, v_w, m_b, v_b;

    AdamState() = default;
    AdamState(const MlpModel& model, AdamOptions o) : opts(o) {
        for (const auto& l : model.layers) {
            m_w.emplace_back(l.weight.size(), 0.0);
            v_w.emplace_back(l.weight.size(), 0.0);
            m_b.emplace_back(l.bias.size(), 0.0);
            v_b.emplace_back(l.bias.size(), 0.0);
        }
    }
};

namespace detail {
inline void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                        std::vector<double>& m, std::vector<double>& v, const AdamOptions& o,
                        double bc1, double bc2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i] + o.weight_decay * param[i];
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.eps);
    }
}

inline bool finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}
}  // namespace detail

/// One Adam step over every trainable layer. Frozen layers are left bitwise
/// untouched (parameters and moments).
inline void adam_step(MlpModel& model, const Gradients& grads, AdamState& state) {
    if (grads.weight.size() != model.layers.size() || state.m_w.size() != model.layers.size())
        throw DimensionError("adam_step: gradient/state layer count mismatch");
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const auto& l = model.layers[li];
        if (grads.weight[li].rows() != l.weight.rows() || grads.weight[li].cols() != l.weight.cols() ||
            grads.bias[li].size() != l.bias.size())
            throw DimensionError("adam_step: gradient shape mismatch at layer " + std::to_string(li));
        if (l.trainable && (!grads.weight[li].all_finite() || !detail::finite(grads.bias[li])))
            throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(li));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.opts.beta1, t);
    const double bc2 = 1.0 - std::pow(state.opts.beta2, t);
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& l = model.layers[li];
        if (!l.trainable) continue;
        detail::adam_update(l.weight.data(), grads.weight[li].data(), state.m_w[li], state.v_w[li],
                            state.opts, bc1, bc2);
        detail::adam_update(l.bias, grads.bias[li], state.m_b[li], state.v_b[li], state.opts, bc1,
                            bc2);
    }
    ++model.version;
}

}  // namespace ssltraffic::nn
