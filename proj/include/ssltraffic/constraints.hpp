#pragma once

// Algebraic identities among continuous flow features, e.g.
// throughput = total_bytes / duration. Used two ways: as an L1 penalty on
// autoencoder reconstructions and as a one-pass projection that restores the
// identities after view augmentation.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/matrix.hpp"

namespace ssltraffic {

enum class ConstraintKind { ratio, sum, product };

inline const char* to_string(ConstraintKind k) {
    switch (k) {
        case ConstraintKind::ratio: return "ratio";
        case ConstraintKind::sum: return "sum";
        case ConstraintKind::product: return "product";
    }
    return "?";
}

inline ConstraintKind constraint_kind_from_string(const std::string& s) {
    if (s == "ratio") return ConstraintKind::ratio;
    if (s == "sum") return ConstraintKind::sum;
    if (s == "product") return ConstraintKind::product;
    throw ConfigError("unknown constraint kind '" + s + "' (expected ratio, sum or product)");
}

/// One identity over the continuous slice:
///   ratio:   x[a] = x[b] / max(x[c] + offset, floor)
///   sum:     x[a] = x[b] + x[c]
///   product: x[a] = x[b] * x[c]
/// `floor` <= 0 means "use the set's delta".
struct Constraint {
    ConstraintKind kind = ConstraintKind::ratio;
    std::size_t a = 0, b = 0, c = 0;
    double phi = 1.0;
    double offset = 0.0;
    double floor = 0.0;
};

class ConstraintSet {
public:
    static constexpr double kDefaultDelta = 1e-6;

    ConstraintSet() = default;

    /// Validates indices, weights and acyclicity. Constraints are kept in the
    /// listed order except that a constraint whose parent is derived by a
    /// later one is moved after it (stable topological order), so a single
    /// pass of `project` resolves chains.
    ConstraintSet(std::vector<Constraint> constraints, std::size_t continuous_width,
                  double delta = kDefaultDelta)
        : width_(continuous_width), delta_(delta) {
        if (!(delta > 0.0)) throw ConfigError("constraint delta must be > 0");
        for (std::size_t i = 0; i < constraints.size(); ++i) {
            const auto& c = constraints[i];
            const std::string where = "constraint " + std::to_string(i);
            if (c.a >= width_ || c.b >= width_ || c.c >= width_)
                throw ConfigError(where + ": feature index outside continuous width");
            if (c.a == c.b || c.a == c.c || c.b == c.c)
                throw ConfigError(where + ": feature indices must be distinct");
            if (!(std::isfinite(c.phi) && c.phi >= 0.0))
                throw ConfigError(where + ": phi must be finite and >= 0");
            for (std::size_t j = 0; j < i; ++j)
                if (constraints[j].a == c.a)
                    throw ConfigError(where + ": feature already derived by constraint " +
                                      std::to_string(j));
        }
        constraints_ = topological_order(std::move(constraints));
    }

    std::span<const Constraint> constraints() const noexcept { return constraints_; }
    std::size_t size() const noexcept { return constraints_.size(); }
    bool empty() const noexcept { return constraints_.empty(); }
    std::size_t width() const noexcept { return width_; }
    double delta() const noexcept { return delta_; }

    double floor_of(const Constraint& c) const noexcept { return c.floor > 0.0 ? c.floor : delta_; }

    /// Copy with every phi multiplied by `s`.
    ConstraintSet scaled(double s) const {
        ConstraintSet out = *this;
        for (auto& c : out.constraints_) c.phi *= s;
        return out;
    }

private:
    static std::vector<Constraint> topological_order(std::vector<Constraint> in) {
        std::vector<Constraint> out;
        std::vector<bool> placed(in.size(), false);
        auto derived_by_pending = [&](std::size_t feature) {
            for (std::size_t j = 0; j < in.size(); ++j)
                if (!placed[j] && in[j].a == feature) return true;
            return false;
        };
        while (out.size() < in.size()) {
            bool progressed = false;
            for (std::size_t i = 0; i < in.size(); ++i) {
                if (placed[i]) continue;
                if (derived_by_pending(in[i].b) || derived_by_pending(in[i].c)) continue;
                placed[i] = true;
                out.push_back(in[i]);
                progressed = true;
                break;
            }
            if (!progressed) throw ConfigError("constraint graph contains a cycle");
        }
        return out;
    }

    std::vector<Constraint> constraints_;
    std::size_t width_ = 0;
    double delta_ = kDefaultDelta;
};

/// Value the identity assigns to x[a].
inline double derived_value(const ConstraintSet& set, const Constraint& c, std::span<const double> x) {
    switch (c.kind) {
        case ConstraintKind::ratio: return x[c.b] / std::max(x[c.c] + c.offset, set.floor_of(c));
        case ConstraintKind::sum: return x[c.b] + x[c.c];
        case ConstraintKind::product: return x[c.b] * x[c.c];
    }
    return 0.0;
}

/// g(x) = x[a] - derived value.
inline double residual(const ConstraintSet& set, const Constraint& c, std::span<const double> x) {
    return x[c.a] - derived_value(set, c, x);
}

struct PenaltyResult {
    double loss = 0.0;
    nn::Matrix grad;
};

/// Batch mean of sum_m phi_m * scale_m * |g_m(x)|, with its (sub)gradient.
/// The subgradient of |.| at 0 is 0. `residual_scale`, if given, holds one
/// multiplier per constraint (in `set.constraints()` order).
inline PenaltyResult penalty(const ConstraintSet& set, const nn::Matrix& batch,
                             std::span<const double> residual_scale = {}) {
    if (batch.cols() != set.width())
        throw DimensionError("penalty: batch width " + std::to_string(batch.cols()) +
                             " != constraint width " + std::to_string(set.width()));
    if (!residual_scale.empty() && residual_scale.size() != set.size())
        throw DimensionError("penalty: residual scale count != constraint count");
    PenaltyResult res{0.0, nn::Matrix(batch.rows(), batch.cols())};
    if (batch.rows() == 0) return res;
    const double inv_n = 1.0 / static_cast<double>(batch.rows());
    const auto cons = set.constraints();
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        const auto x = batch.row(r);
        auto g = res.grad.row(r);
        for (std::size_t m = 0; m < cons.size(); ++m) {
            const auto& c = cons[m];
            const double w = c.phi * (residual_scale.empty() ? 1.0 : residual_scale[m]);
            const double resid = residual(set, c, x);
            res.loss += w * std::abs(resid);
            if (resid == 0.0 || w == 0.0) continue;
            const double s = (resid > 0.0 ? 1.0 : -1.0) * w * inv_n;
            g[c.a] += s;
            switch (c.kind) {
                case ConstraintKind::ratio: {
                    const double shifted = x[c.c] + c.offset;
                    const double floor = set.floor_of(c);
                    const double den = std::max(shifted, floor);
                    g[c.b] -= s / den;
                    if (shifted > floor) g[c.c] += s * x[c.b] / (den * den);
                    break;
                }
                case ConstraintKind::sum:
                    g[c.b] -= s;
                    g[c.c] -= s;
                    break;
                case ConstraintKind::product:
                    g[c.b] -= s * x[c.c];
                    g[c.c] -= s * x[c.b];
                    break;
            }
        }
    }
    res.loss *= inv_n;
    return res;
}

/// Restores every identity by recomputing each derived feature from its
/// parents, in dependency order. Only derived coordinates change.
inline void project_in_place(const ConstraintSet& set, std::span<double> x_cont) {
    if (x_cont.size() != set.width())
        throw DimensionError("project: vector width " + std::to_string(x_cont.size()) +
                             " != constraint width " + std::to_string(set.width()));
    for (const auto& c : set.constraints()) x_cont[c.a] = derived_value(set, c, x_cont);
}

inline std::vector<double> project(const ConstraintSet& set, std::span<const double> x_cont) {
    std::vector<double> out(x_cont.begin(), x_cont.end());
    project_in_place(set, out);
    return out;
}

}  // namespace ssltraffic
