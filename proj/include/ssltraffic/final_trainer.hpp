#pragma once

// Final classifier trained on the pseudo-labeled pool with per-sample
// weights and label-smoothed symmetric cross-entropy.

#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ssltraffic/dataset.hpp"
#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/train.hpp"

namespace ssltraffic {

struct SceConfig {
    double alpha = 0.3;
    double beta = 2.0;
    double smoothing = 0.1;
    std::vector<std::size_t> hidden{512, 256, 128};
    double dropout = 0.3;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    std::size_t batch_size = 128;
    std::size_t epochs = 50;
    bool include_labeled = false;  // also train on D_s with weight 1
    std::uint64_t seed = 1;

    void validate() const {
        if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0))
            throw ConfigError("final: alpha, beta must be >= 0 with a positive sum");
        if (!(smoothing > 0.0 && smoothing < 1.0)) throw ConfigError("final: smoothing must be in (0, 1)");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("final: dropout must be in [0, 1)");
        if (!(learning_rate > 0.0) || batch_size == 0) throw ConfigError("final: bad optimizer settings");
        if (!(weight_decay >= 0.0)) throw ConfigError("final: weight decay must be >= 0");
    }
};

/// Batch mean of w_i [alpha CE(p_i, yhat_i) + beta RCE(yhat_i, p_i)] with
/// yhat = 1 - eps on the label and eps / (K - 1) elsewhere; p = softmax(logits).
/// The gradient is with respect to the logits.
inline nn::LossResult sce_loss(const nn::Matrix& logits, std::span<const int> labels, std::span<const double> weights,
                               double alpha, double beta, double smoothing) {
    nn::require_finite(logits, "sce_loss logits");
    const std::size_t n = logits.rows(), k = logits.cols();
    if (labels.size() != n || (!weights.empty() && weights.size() != n))
        throw DimensionError("sce_loss: labels/weights length != rows");
    if (k < 2) throw DimensionError("sce_loss: need at least 2 classes");
    nn::LossResult out{0.0, nn::Matrix(n, k)};
    if (n == 0) return out;
    const double on = 1.0 - smoothing, off = smoothing / static_cast<double>(k - 1);
    const double c_on = -std::log(on), c_off = -std::log(off);
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> logp(k);
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (labels[i] < 0 || y >= k) throw ConfigError("sce_loss: label " + std::to_string(labels[i]) + " out of range");
        const double w = weights.empty() ? 1.0 : weights[i];
        nn::log_softmax_row(logits.row(i), logp);
        double ce = 0.0, rce = 0.0, pc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(logp[j]);
            const double t = j == y ? on : off;
            const double c = j == y ? c_on : c_off;
            ce -= t * logp[j];
            rce += p * c;
            pc += p * c;
        }
        out.loss += w * (alpha * ce + beta * rce) * inv_n;
        auto g = out.grad.row(i);
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(logp[j]);
            const double t = j == y ? on : off;
            const double c = j == y ? c_on : c_off;
            g[j] = w * inv_n * (alpha * (p - t) + beta * p * (c - pc));
        }
    }
    if (!std::isfinite(out.loss)) throw NumericError("sce_loss: non-finite loss");
    return out;
}

inline nn::LossResult sce_loss(const nn::Matrix& logits, std::span<const int> labels, std::span<const double> weights,
                               const SceConfig& cfg) {
    return sce_loss(logits, labels, weights, cfg.alpha, cfg.beta, cfg.smoothing);
}

struct FinalEpoch {
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct FinalResult {
    nn::MlpModel model;
    std::vector<FinalEpoch> history;
    std::vector<std::string> warnings;
};

inline nn::MlpModel make_final_classifier(std::size_t inputs, std::size_t classes, const SceConfig& cfg) {
    Rng rng = make_rng(cfg.seed, 0x66696e);
    return nn::make_mlp(inputs, cfg.hidden, classes, nn::Activation::softmax, cfg.dropout, rng);
}

/// Trains on encoded inputs `x` with `labels`; empty `weights` means all ones.
inline FinalResult train_final(const nn::Matrix& x, std::span<const int> labels, std::span<const double> weights,
                               std::size_t classes, const SceConfig& cfg) {
    cfg.validate();
    if (x.rows() != labels.size()) throw DimensionError("train_final: label count != rows");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw ConfigError("train_final: label " + std::to_string(l) + " does not fit " + std::to_string(classes) +
                              " classes");
    for (double w : weights)
        if (!(w >= 0.0 && w <= 1.0)) throw DataError("train_final: weight outside [0, 1]");
    FinalResult res;
    res.model = make_final_classifier(x.cols(), classes, cfg);
    nn::AdamState state(res.model, {cfg.learning_rate, cfg.weight_decay});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        nn::TrainOptions t{1, cfg.batch_size, state.opts, derive_seed(cfg.seed, 1000 + epoch)};
        const auto h = nn::train_minibatch(
            res.model, x, t,
            [&](const nn::Matrix& logits, std::span<const std::size_t> idx) {
                std::vector<int> y;
                std::vector<double> w;
                for (auto i : idx) {
                    y.push_back(labels[i]);
                    if (!weights.empty()) w.push_back(weights[i]);
                }
                return sce_loss(logits, y, w, cfg);
            },
            &state);
        const auto pred = nn::argmax_rows(nn::predict(res.model, x));
        std::size_t hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
        res.history.push_back({h.front(), x.rows() ? double(hit) / double(x.rows()) : 0.0});
    }
    return res;
}

/// Trains on the pool's pseudo-labels (or true labels when there are none)
/// and its weight column; a missing weight column means uniform weights.
/// With `include_labeled`, rows of `labeled` are appended with weight 1.
inline FinalResult train_final(const Dataset& pool, std::size_t classes, const SceConfig& cfg,
                               const Dataset* labeled = nullptr) {
    const auto* labels = pool.pseudo_labels ? &*pool.pseudo_labels : pool.labels ? &*pool.labels : nullptr;
    if (!labels) throw DataError("train_final: dataset has neither pseudo_label nor label column");
    std::vector<std::string> warnings;
    std::vector<double> w;
    if (pool.weights) w = *pool.weights;
    else warnings.push_back("no weight column; training with uniform weights (direct training)");
    nn::Matrix x = encode_inputs(pool);
    std::vector<int> y = *labels;
    if (cfg.include_labeled && labeled) {
        if (!labeled->labels) throw DataError("train_final: labeled set has no label column");
        if (w.empty()) w.assign(y.size(), 1.0);
        x = nn::vstack(x, encode_inputs(*labeled));
        y.insert(y.end(), labeled->labels->begin(), labeled->labels->end());
        w.resize(y.size(), 1.0);
    }
    auto res = train_final(x, y, w, classes, cfg);
    res.warnings.insert(res.warnings.begin(), warnings.begin(), warnings.end());
    return res;
}

struct Prediction {
    std::vector<int> labels;
    nn::Matrix probs;
};

inline Prediction predict(const nn::MlpModel& model, const Dataset& ds) {
    Prediction p;
    p.probs = nn::predict_proba(model, encode_inputs(ds));
    p.labels = nn::argmax_rows(p.probs);
    return p;
}

inline void write_final_history(const std::vector<FinalEpoch>& h, std::ostream& out) {
    out << "epoch,loss,train_accuracy\n";
    for (std::size_t i = 0; i < h.size(); ++i)
        out << i + 1 << ',' << csv_detail::format_double(h[i].loss) << ','
            << csv_detail::format_double(h[i].train_accuracy) << '\n';
}

}  // namespace ssltraffic
