#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ssltraffic/nn/matrix.hpp"

namespace ssltraffic::nn {

/// Natural log is clamped below at this value (log 1e-12).
inline constexpr double kLogFloor = -27.631021115928547;

struct LossResult {
    double loss = 0.0;
    Matrix grad;
};

/// Row-wise softmax with row-max subtraction.
inline Matrix softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto in = logits.row(r);
        auto o = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            o[k] = std::exp(in[k] - mx);
            sum += o[k];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

/// log-softmax of one row, clamped at kLogFloor.
inline void log_softmax_row(std::span<const double> in, std::span<double> out) {
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (double v : in) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = std::max(in[k] - lse, kLogFloor);
}

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

/// Weighted softmax cross-entropy on logits. Loss is
/// (1/N) * sum_i w_i * (-sum_k t_ik log p_ik); the gradient is w.r.t. logits.
/// An empty `sample_weights` means all ones.
inline LossResult softmax_ce_loss(const Matrix& logits, const Matrix& targets,
                                  std::span<const double> sample_weights = {}) {
    require_same_shape(logits, targets, "softmax_ce_loss");
    if (!sample_weights.empty() && sample_weights.size() != logits.rows())
        throw DimensionError("softmax_ce_loss: weight count != rows");
    require_finite(logits, "softmax_ce_loss logits");

    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    LossResult res{0.0, Matrix(n, k)};
    if (n == 0) return res;
    std::vector<double> logp(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = sample_weights.empty() ? 1.0 : sample_weights[i];
        log_softmax_row(logits.row(i), logp);
        double row_loss = 0.0;
        for (std::size_t c = 0; c < k; ++c) row_loss -= targets(i, c) * logp[c];
        res.loss += w * row_loss;
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < k; ++c)
            res.grad(i, c) = w * inv_n * (std::exp(logp[c]) - targets(i, c));
    }
    res.loss *= inv_n;
    return res;
}

/// One-hot rows for integer labels.
inline Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
    Matrix t(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw DataError("label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        t(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

/// Mean over all elements of (pred - target)^2.
inline LossResult mse_loss(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "mse_loss");
    LossResult res{0.0, Matrix(pred.rows(), pred.cols())};
    if (pred.empty()) return res;
    const double inv = 1.0 / static_cast<double>(pred.size());
    const auto& p = pred.data();
    const auto& t = target.data();
    auto& g = res.grad.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        res.loss += d * d;
        g[i] = 2.0 * d * inv;
    }
    res.loss *= inv;
    return res;
}

/// Row argmax; ties resolve to the lowest index.
inline std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows(), 0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

}  // namespace ssltraffic::nn
