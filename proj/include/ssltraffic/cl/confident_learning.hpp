#pragma once

// Confident learning over pseudo-labels: out-of-fold probabilities,
// per-class quantile thresholds with MAD scales, logistic sample weights,
// soft confident joint and balanced retention.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssltraffic/dataset.hpp"
#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/train.hpp"

namespace ssltraffic::cl {

enum class QuantileMethod { nearest_rank, linear };

struct ClConfig {
    std::size_t folds = 5;
    double q = 0.70;
    double w_min = 0.20;
    double gamma = 4.0;
    double eps_sigma = 1e-6;
    double eps_mass = 1e-9;
    QuantileMethod quantile = QuantileMethod::nearest_rank;
    /// "logistic" (multinomial logistic regression) or "mlp".
    std::string base = "logistic";
    std::vector<std::size_t> hidden{128, 64};
    double dropout = 0.2;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    std::size_t threads = 1;
    std::uint64_t seed = 1;

    void validate() const {
        if (folds < 2) throw ConfigError("cl: folds must be >= 2");
        if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("cl: q must be in [0, 1]");
        if (!(w_min > 0.0 && w_min < 1.0)) throw ConfigError("cl: w_min must be in (0, 1)");
        if (!(gamma > 0.0)) throw ConfigError("cl: gamma must be > 0");
        if (!(eps_sigma > 0.0) || !(eps_mass > 0.0)) throw ConfigError("cl: epsilons must be > 0");
        if (base != "logistic" && base != "mlp") throw ConfigError("cl: base must be 'logistic' or 'mlp'");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cl: dropout must be in [0, 1)");
        if (!(learning_rate > 0.0) || batch_size == 0) throw ConfigError("cl: bad optimizer settings");
    }
};

/// Trains on (x, y) and returns class probabilities for `test`.
using BaseClassifier = std::function<nn::Matrix(const nn::Matrix& x, std::span<const int> y, const nn::Matrix& test,
                                                std::size_t classes, std::uint64_t seed)>;

inline BaseClassifier make_base_classifier(const ClConfig& cfg) {
    return [cfg](const nn::Matrix& x, std::span<const int> y, const nn::Matrix& test, std::size_t classes,
                 std::uint64_t seed) {
        Rng rng = make_rng(seed, 0x696e6974);
        const std::vector<std::size_t> none;
        auto model = cfg.base == "mlp"
                         ? nn::make_mlp(x.cols(), cfg.hidden, classes, nn::Activation::softmax, cfg.dropout, rng)
                         : nn::make_mlp(x.cols(), none, classes, nn::Activation::softmax, 0.0, rng);
        nn::TrainOptions t{cfg.epochs, cfg.batch_size, {cfg.learning_rate, 0.0}, seed};
        nn::fit_classifier(model, x, y, t);
        return nn::predict_proba(model, test);
    };
}

struct OosProbabilities {
    nn::Matrix probs;
    std::vector<std::size_t> fold;
    std::vector<double> self_confidence;
    std::size_t folds_used = 0;
};

/// Stratified fold ids: each class is shuffled, then its rows are dealt
/// round-robin with one counter shared by all classes, so both overall and
/// per-class fold sizes differ by at most one.
inline std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t classes, std::size_t folds,
                                                 std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    Rng rng = make_rng(seed, 0x666f6c64);
    std::vector<std::size_t> fold(labels.size());
    std::size_t counter = 0;
    for (auto& rows : by_class) {
        shuffle(rows, rng);
        for (auto r : rows) fold[r] = counter++ % folds;
    }
    return fold;
}

inline void check_labels(std::span<const int> labels, std::size_t classes) {
    if (classes < 2) throw DataError("confident learning needs at least 2 classes");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw DataError("pseudo-label " + std::to_string(l) + " outside 0.." + std::to_string(classes - 1));
}

/// Out-of-fold probabilities. The fold count drops to the smallest non-empty
/// class size (at least 2) when a class is too small; a warning is appended.
inline OosProbabilities oos_probs(const nn::Matrix& x, std::span<const int> labels, std::size_t classes,
                                  const ClConfig& cfg, const BaseClassifier& base,
                                  std::vector<std::string>* warnings = nullptr) {
    cfg.validate();
    check_labels(labels, classes);
    if (x.rows() != labels.size()) throw DimensionError("oos_probs: label count != rows");
    std::vector<std::size_t> counts(classes, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    std::size_t smallest = labels.size();
    for (auto c : counts)
        if (c > 0) smallest = std::min(smallest, c);
    std::size_t folds = cfg.folds;
    if (smallest < folds) {
        folds = std::max<std::size_t>(2, smallest);
        if (warnings)
            warnings->push_back("smallest pseudo-class has " + std::to_string(smallest) + " rows; using " +
                                std::to_string(folds) + " folds instead of " + std::to_string(cfg.folds));
    }
    if (labels.size() < folds) throw DataError("oos_probs: fewer rows than folds");

    OosProbabilities out;
    out.folds_used = folds;
    out.fold = stratified_folds(labels, classes, folds, cfg.seed);
    out.probs = nn::Matrix(x.rows(), classes);

    auto run_fold = [&](std::size_t f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < labels.size(); ++i) (out.fold[i] == f ? test : train).push_back(i);
        std::vector<int> y;
        for (auto i : train) y.push_back(labels[i]);
        const auto p = base(x.gather_rows(train), y, x.gather_rows(test), classes, derive_seed(cfg.seed, f + 1));
        for (std::size_t t = 0; t < test.size(); ++t)
            std::copy(p.row(t).begin(), p.row(t).end(), out.probs.row(test[t]).begin());
    };
    const std::size_t workers = std::clamp<std::size_t>(cfg.threads, 1, folds);
    if (workers == 1) {
        for (std::size_t f = 0; f < folds; ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t f = w; f < folds; f += workers) run_fold(f);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.self_confidence.push_back(out.probs(i, static_cast<std::size_t>(labels[i])));
    return out;
}

// ---------------------------------------------------------------------------
// Per-class statistics

/// Order statistic at rank ceil(q n) (1-based, clamped to [1, n]) of a sorted sample.
inline double nearest_rank(std::span<const double> sorted, double q) {
    const auto n = sorted.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return sorted[rank - 1];
}

/// Linear interpolation between order statistics at position q (n - 1).
inline double linear_quantile(std::span<const double> sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double median_sorted(std::span<const double> sorted) {
    const auto n = sorted.size();
    return n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

struct ClassStats {
    std::vector<std::size_t> n;
    std::vector<double> threshold, median, mad, sigma;
};

/// Thresholds, medians, MADs and floored scales of the self-confidence per
/// class. An empty class throws unless `allow_empty`, in which case its
/// entries are zero (sigma = eps_sigma).
inline ClassStats class_stats(std::span<const double> s, std::span<const int> labels, std::size_t classes,
                              const ClConfig& cfg, bool allow_empty = false) {
    std::vector<std::vector<double>> by_class(classes);
    for (std::size_t i = 0; i < s.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(s[i]);
    ClassStats st;
    for (std::size_t j = 0; j < classes; ++j) {
        auto& v = by_class[j];
        st.n.push_back(v.size());
        if (v.empty()) {
            if (!allow_empty) throw DataError("class " + std::to_string(j) + " has no pseudo-labeled rows");
            st.threshold.push_back(0.0);
            st.median.push_back(0.0);
            st.mad.push_back(0.0);
            st.sigma.push_back(cfg.eps_sigma);
            continue;
        }
        std::sort(v.begin(), v.end());
        st.threshold.push_back(cfg.quantile == QuantileMethod::linear ? linear_quantile(v, cfg.q)
                                                                      : nearest_rank(v, cfg.q));
        const double med = median_sorted(v);
        std::vector<double> dev;
        for (double x : v) dev.push_back(std::abs(x - med));
        std::sort(dev.begin(), dev.end());
        const double mad = median_sorted(dev);
        st.median.push_back(med);
        st.mad.push_back(mad);
        st.sigma.push_back(std::max(mad, cfg.eps_sigma));
    }
    return st;
}

// ---------------------------------------------------------------------------
// Weights

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

struct SampleWeights {
    std::vector<double> z;
    std::vector<double> raw;    // w
    std::vector<double> final;  // w' (after balanced retention)
};

/// z = (s - t_j) / (gamma sigma_j), w = w_min + (1 - w_min) sigm(z).
inline SampleWeights logistic_weights(std::span<const double> s, std::span<const int> labels, const ClassStats& st,
                                      double w_min, double gamma) {
    SampleWeights w;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto j = static_cast<std::size_t>(labels[i]);
        const double z = (s[i] - st.threshold[j]) / (gamma * st.sigma[j]);
        w.z.push_back(z);
        w.raw.push_back(std::clamp(w_min + (1.0 - w_min) * sigmoid(z), w_min, 1.0));
    }
    return w;
}

struct ConfidentJoint {
    nn::Matrix q;              // q(k, j): soft count of true class k among rows labeled j
    std::vector<double> rho;   // clean fraction per class
    std::vector<double> target, mass, scale;  // T_j, M_j, a_j
    std::vector<double> retained;             // sum of w' per class
};

/// Soft confident joint and clean fractions. A class with no rows has rho 0.
inline ConfidentJoint confident_joint(const nn::Matrix& probs, std::span<const int> labels) {
    const std::size_t k = probs.cols();
    ConfidentJoint cj;
    cj.q = nn::Matrix(k, k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto j = static_cast<std::size_t>(labels[i]);
        for (std::size_t c = 0; c < k; ++c) cj.q(c, j) += probs(i, c);
    }
    for (std::size_t j = 0; j < k; ++j) {
        double col = 0.0;
        for (std::size_t c = 0; c < k; ++c) col += cj.q(c, j);
        cj.rho.push_back(col > 0.0 ? cj.q(j, j) / col : 0.0);
    }
    return cj;
}

/// T_j = rho_j n_j, M_j = sum of w over class j, a_j = T_j / max(eps, M_j),
/// w' = clip(a_j w, w_min, 1). Fills the per-class fields of `cj`.
inline void balanced_retention(SampleWeights& w, std::span<const int> labels, ConfidentJoint& cj,
                               std::span<const std::size_t> n, double w_min, double eps_mass) {
    const std::size_t k = cj.rho.size();
    cj.target.assign(k, 0.0);
    cj.mass.assign(k, 0.0);
    cj.scale.assign(k, 0.0);
    cj.retained.assign(k, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) cj.mass[static_cast<std::size_t>(labels[i])] += w.raw[i];
    for (std::size_t j = 0; j < k; ++j) {
        cj.target[j] = cj.rho[j] * static_cast<double>(n[j]);
        cj.scale[j] = cj.target[j] / std::max(eps_mass, cj.mass[j]);
    }
    w.final.resize(w.raw.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto j = static_cast<std::size_t>(labels[i]);
        w.final[i] = std::clamp(cj.scale[j] * w.raw[i], w_min, 1.0);
        cj.retained[j] += w.final[i];
    }
}

// ---------------------------------------------------------------------------
// End to end

inline constexpr std::size_t kHistogramBins = 50;

struct ClReport {
    OosProbabilities oos;
    ClassStats stats;
    SampleWeights weights;
    ConfidentJoint joint;
    std::vector<std::vector<std::size_t>> histogram;  // per class, 50 bins of s over [0, 1]
    std::vector<double> mean_confidence;              // per class
    std::vector<std::string> warnings;
};

inline ClReport run_cl(const nn::Matrix& x, std::span<const int> labels, std::size_t classes, const ClConfig& cfg,
                       const BaseClassifier& base) {
    ClReport r;
    r.oos = oos_probs(x, labels, classes, cfg, base, &r.warnings);
    const auto& s = r.oos.self_confidence;
    r.stats = class_stats(s, labels, classes, cfg, true);
    for (std::size_t j = 0; j < classes; ++j)
        if (r.stats.n[j] == 0) r.warnings.push_back("class " + std::to_string(j) + " received no pseudo-labels");
    r.weights = logistic_weights(s, labels, r.stats, cfg.w_min, cfg.gamma);
    r.joint = confident_joint(r.oos.probs, labels);
    balanced_retention(r.weights, labels, r.joint, r.stats.n, cfg.w_min, cfg.eps_mass);
    r.histogram.assign(classes, std::vector<std::size_t>(kHistogramBins, 0));
    r.mean_confidence.assign(classes, 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto j = static_cast<std::size_t>(labels[i]);
        const auto bin = std::min(kHistogramBins - 1, static_cast<std::size_t>(std::max(0.0, s[i]) * kHistogramBins));
        ++r.histogram[j][bin];
        r.mean_confidence[j] += s[i];
    }
    for (std::size_t j = 0; j < classes; ++j)
        if (r.stats.n[j]) r.mean_confidence[j] /= static_cast<double>(r.stats.n[j]);
    return r;
}

inline ClReport run_cl(const Dataset& ds, std::size_t classes, const ClConfig& cfg) {
    if (!ds.pseudo_labels) throw DataError("confident learning: dataset has no pseudo_label column");
    return run_cl(encode_inputs(ds), *ds.pseudo_labels, classes, cfg, make_base_classifier(cfg));
}

inline nlohmann::json to_json(const ClReport& r) {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t j = 0; j < r.stats.n.size(); ++j) {
        std::vector<double> qcol;
        for (std::size_t k = 0; k < r.joint.q.rows(); ++k) qcol.push_back(r.joint.q(k, j));
        classes.push_back({{"class", j},
                           {"n", r.stats.n[j]},
                           {"threshold", r.stats.threshold[j]},
                           {"median", r.stats.median[j]},
                           {"mad", r.stats.mad[j]},
                           {"sigma", r.stats.sigma[j]},
                           {"mean_self_confidence", r.mean_confidence[j]},
                           {"rho", r.joint.rho[j]},
                           {"target_mass", r.joint.target[j]},
                           {"raw_mass", r.joint.mass[j]},
                           {"scale", r.joint.scale[j]},
                           {"retained_mass", r.joint.retained[j]},
                           {"retention_gap", r.joint.retained[j] - r.joint.target[j]},
                           {"confident_joint_column", qcol},
                           {"histogram", r.histogram[j]}});
    }
    return {{"format", "ssltraffic-cl-report"},
            {"version", 1},
            {"folds", r.oos.folds_used},
            {"histogram_bins", kHistogramBins},
            {"classes", classes},
            {"warnings", r.warnings}};
}

}  // namespace ssltraffic::cl
