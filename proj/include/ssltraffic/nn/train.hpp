#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ssltraffic/nn/adam.hpp"
#include "ssltraffic/nn/losses.hpp"
#include "ssltraffic/nn/mlp.hpp"

namespace ssltraffic::nn {

struct TrainOptions {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    AdamOptions adam;
    std::uint64_t seed = 0;
};

/// Loss callback: (logits of the batch, row indices of the batch) -> loss and dL/dlogits.
using BatchLoss = std::function<LossResult(const Matrix&, std::span<const std::size_t>)>;

/// Mini-batch Adam training. Rows are reshuffled every epoch from the seeded
/// generator; the last partial batch is kept. Returns the per-epoch mean loss.
inline std::vector<double> train_minibatch(MlpModel& model, const Matrix& inputs,
                                           const TrainOptions& opts, const BatchLoss& loss_fn,
                                           AdamState* state = nullptr) {
    AdamState local;
    if (!state) {
        local = AdamState(model, opts.adam);
        state = &local;
    }
    Rng rng = make_rng(opts.seed, 0x7472);
    const std::size_t n = inputs.rows();
    const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
    std::vector<double> history;
    if (n == 0) return history;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto order = permutation(n, rng);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix batch = inputs.gather_rows(idx);
            auto fwd = forward(model, batch, true, rng);
            const LossResult lr = loss_fn(fwd.cache.logits(), idx);
            if (!std::isfinite(lr.loss)) throw NumericError("training loss is not finite");
            total += lr.loss * static_cast<double>(idx.size());
            const Gradients g = backward(model, fwd.cache, lr.grad);
            adam_step(model, g, *state);
        }
        history.push_back(total / static_cast<double>(n));
    }
    return history;
}

/// Weighted softmax cross-entropy fit against integer labels.
inline std::vector<double> fit_classifier(MlpModel& model, const Matrix& inputs,
                                          std::span<const int> labels, const TrainOptions& opts,
                                          std::span<const double> weights = {},
                                          AdamState* state = nullptr) {
    const std::size_t k = model.out_width();
    const Matrix targets = one_hot(labels, k);
    return train_minibatch(
        model, inputs, opts,
        [&](const Matrix& logits, std::span<const std::size_t> idx) {
            const Matrix t = targets.gather_rows(idx);
            std::vector<double> w;
            if (!weights.empty()) {
                w.reserve(idx.size());
                for (auto i : idx) w.push_back(weights[i]);
            }
            return softmax_ce_loss(logits, t, w);
        },
        state);
}

/// Class probabilities (softmax of the final pre-activation).
inline Matrix predict_proba(const MlpModel& model, const Matrix& inputs) {
    if (model.layers.back().activation == Activation::softmax) return predict(model, inputs);
    return softmax(predict(model, inputs));
}

}  // namespace ssltraffic::nn
