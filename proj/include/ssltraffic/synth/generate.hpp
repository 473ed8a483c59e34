#pragma once

// Seeded Gaussian-mixture tabular data with constraint-consistent derived
// features, label-noise injection and stratified labeled/unlabeled splits.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ssltraffic/constraints.hpp"
#include "ssltraffic/dataset.hpp"
#include "ssltraffic/errors.hpp"
#include "ssltraffic/flow/features.hpp"
#include "ssltraffic/rng.hpp"

namespace ssltraffic::synth {

/// Base continuous feature: per-class normal, or log-normal when `log_scale`.
struct SynthContinuous {
    std::string name;
    std::vector<double> mean;    // one per class
    std::vector<double> stddev;  // one per class
    bool log_scale = false;
};

/// Derived continuous feature: name = kind(b, c), as in Constraint.
struct SynthDerived {
    std::string name;
    ConstraintKind kind = ConstraintKind::ratio;
    std::string b, c;
    double offset = 0.0;
    double floor = 0.0;
};

struct SynthCategorical {
    std::string name;
    std::vector<std::string> vocabulary;
    std::vector<std::vector<double>> probs;  // per class, over the vocabulary
};

struct SynthSpec {
    std::size_t num_classes = 2;
    std::vector<double> priors;
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    std::vector<SynthContinuous> base;
    std::vector<SynthDerived> derived;
    std::vector<SynthCategorical> categorical;
    /// Output column order; empty means base, derived, categorical.
    std::vector<std::string> columns;
};

/// Priors rescaled to sum to 1 (e.g. percentages).
inline std::vector<double> normalize_priors(std::vector<double> p) {
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(s > 0.0)) throw ConfigError("priors must have a positive sum");
    for (double& v : p) {
        if (!(v >= 0.0)) throw ConfigError("priors must be non-negative");
        v /= s;
    }
    return p;
}

/// Class shares of the Table II traffic mix (YouTube 41.85%, ...).
inline std::vector<double> paper_class_priors() {
    return normalize_priors({41.85, 5.44, 10.80, 7.48, 3.69, 4.44, 6.04, 10.86, 4.38, 5.01});
}

inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // Rounding left a sliver above the last cumulative value.
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0) return i;
    return 0;
}

inline void validate(const SynthSpec& s) {
    const std::size_t k = s.num_classes;
    if (k < 2) throw ConfigError("synth: need at least 2 classes");
    if (s.priors.size() != k) throw ConfigError("synth: priors length != num_classes");
    double sum = 0.0;
    for (double p : s.priors) {
        if (!(p >= 0.0)) throw ConfigError("synth: negative prior");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("synth: priors must sum to 1");
    if (s.base.empty() && s.categorical.empty()) throw ConfigError("synth: no features");
    for (const auto& f : s.base) {
        if (f.mean.size() != k || f.stddev.size() != k)
            throw ConfigError("synth: feature '" + f.name + "' needs one mean/std per class");
        for (double sd : f.stddev)
            if (!(sd > 0.0) || !std::isfinite(sd))
                throw ConfigError("synth: feature '" + f.name + "' has degenerate std <= 0");
    }
    for (const auto& c : s.categorical) {
        if (c.probs.size() != k) throw ConfigError("synth: '" + c.name + "' needs one distribution per class");
        for (const auto& p : c.probs) {
            if (p.size() != c.vocabulary.size()) throw ConfigError("synth: '" + c.name + "' distribution size");
            const double t = std::accumulate(p.begin(), p.end(), 0.0);
            if (std::abs(t - 1.0) > 1e-6) throw ConfigError("synth: '" + c.name + "' probabilities must sum to 1");
        }
    }
}

inline Schema synth_schema(const SynthSpec& s) {
    std::vector<FeatureSpec> natural;
    for (const auto& f : s.base) natural.push_back({f.name, FeatureKind::continuous, {}});
    for (const auto& f : s.derived) natural.push_back({f.name, FeatureKind::continuous, {}});
    for (const auto& f : s.categorical) natural.push_back({f.name, FeatureKind::categorical, f.vocabulary});
    Schema schema;
    if (s.columns.empty()) {
        schema.features = std::move(natural);
    } else {
        if (s.columns.size() != natural.size()) throw ConfigError("synth: column list does not cover every feature");
        for (const auto& name : s.columns) {
            auto it = std::find_if(natural.begin(), natural.end(), [&](auto& f) { return f.name == name; });
            if (it == natural.end()) throw ConfigError("synth: unknown column '" + name + "'");
            schema.features.push_back(*it);
        }
    }
    schema.validate();
    return schema;
}

/// Constraint set realizing the derived rules over `schema`.
inline ConstraintSet synth_constraints(const SynthSpec& s, const Schema& schema, double phi = 1.0) {
    std::vector<Constraint> out;
    for (const auto& d : s.derived)
        out.push_back({d.kind, schema.continuous_index(d.name), schema.continuous_index(d.b),
                       schema.continuous_index(d.c), phi, d.offset, d.floor});
    return ConstraintSet(std::move(out), schema.continuous_width());
}

/// Labeled raw dataset. Classes are drawn from the priors row by row.
inline Dataset generate(const SynthSpec& spec) {
    validate(spec);
    const Schema schema = synth_schema(spec);
    const ConstraintSet cons = synth_constraints(spec, schema);
    const auto cont_cols = schema.continuous_columns();

    std::vector<std::size_t> base_pos, cat_pos;
    for (const auto& f : spec.base) base_pos.push_back(*schema.find(f.name));
    for (const auto& f : spec.categorical) cat_pos.push_back(*schema.find(f.name));

    Rng rng = make_rng(spec.seed, 0x73796e);
    Dataset ds;
    ds.schema = schema;
    ds.features = nn::Matrix(spec.samples, schema.width());
    std::vector<int> labels(spec.samples);
    std::vector<double> cont(cont_cols.size());
    for (std::size_t r = 0; r < spec.samples; ++r) {
        const std::size_t k = sample_categorical(spec.priors, rng);
        labels[r] = static_cast<int>(k);
        for (std::size_t i = 0; i < spec.base.size(); ++i) {
            const auto& f = spec.base[i];
            const double z = normal(rng, f.mean[k], f.stddev[k]);
            ds.features(r, base_pos[i]) = f.log_scale ? std::exp(z) : z;
        }
        for (std::size_t i = 0; i < spec.categorical.size(); ++i)
            ds.features(r, cat_pos[i]) = static_cast<double>(sample_categorical(spec.categorical[i].probs[k], rng));
        for (std::size_t j = 0; j < cont_cols.size(); ++j) cont[j] = ds.features(r, cont_cols[j]);
        project_in_place(cons, cont);
        for (std::size_t j = 0; j < cont_cols.size(); ++j) ds.features(r, cont_cols[j]) = cont[j];
    }
    ds.labels = std::move(labels);
    return ds;
}

struct FlowSpecOptions {
    std::size_t num_classes = 10;
    std::vector<double> priors;  // empty: uniform
    std::size_t samples = 5000;
    /// Spread of class centres, in units of the within-class std.
    double separation = 1.0;
    std::uint64_t seed = 1;
};

/// A flow-shaped spec over the default 21-column schema: the base counters
/// are log-normal per class, the three ratio features are derived, and
/// protocol/direction follow per-class distributions.
inline SynthSpec flow_spec(const FlowSpecOptions& o) {
    SynthSpec s;
    s.num_classes = o.num_classes;
    s.priors = o.priors.empty() ? std::vector<double>(o.num_classes, 1.0 / double(o.num_classes)) : o.priors;
    s.samples = o.samples;
    s.seed = o.seed;
    const Schema schema = flow::default_flow_schema();
    for (const auto& f : schema.features) s.columns.push_back(f.name);

    const char* derived[] = {"mean_packet_length", "throughput", "mean_iat"};
    s.derived = {{"mean_packet_length", ConstraintKind::ratio, "total_bytes", "total_packets", 0.0, 0.0},
                 {"throughput", ConstraintKind::ratio, "total_bytes", "duration", 0.0, 0.0},
                 {"mean_iat", ConstraintKind::ratio, "duration", "total_packets", -1.0, 1.0}};

    Rng rng = make_rng(o.seed, 0x666c6f77);
    constexpr double kWithin = 0.5;
    for (const auto& f : schema.features) {
        if (f.kind != FeatureKind::continuous) continue;
        if (std::find(std::begin(derived), std::end(derived), f.name) != std::end(derived)) continue;
        SynthContinuous c{f.name, {}, {}, true};
        const double centre = 1.0 + 5.0 * uniform01(rng);
        for (std::size_t k = 0; k < o.num_classes; ++k) {
            c.mean.push_back(centre + o.separation * kWithin * normal(rng));
            c.stddev.push_back(kWithin * (0.75 + 0.5 * uniform01(rng)));
        }
        s.base.push_back(std::move(c));
    }
    for (const auto& f : schema.features) {
        if (f.kind != FeatureKind::categorical) continue;
        SynthCategorical c{f.name, f.vocabulary, {}};
        for (std::size_t k = 0; k < o.num_classes; ++k) {
            std::vector<double> p(f.vocabulary.size());
            for (double& v : p) v = 0.1 + uniform01(rng);
            c.probs.push_back(normalize_priors(p));
        }
        s.categorical.push_back(std::move(c));
    }
    return s;
}

/// Isotropic Gaussian classes over `dims` continuous features x0..x{d-1}:
/// class centres drawn from N(0, separation^2) per coordinate, unit std.
inline SynthSpec gaussian_spec(std::size_t classes, std::size_t dims, double separation, std::vector<double> priors,
                               std::size_t samples, std::uint64_t seed) {
    SynthSpec s;
    s.num_classes = classes;
    s.priors = priors.empty() ? std::vector<double>(classes, 1.0 / double(classes)) : std::move(priors);
    s.samples = samples;
    s.seed = seed;
    Rng rng = make_rng(seed, 0x676175);
    for (std::size_t j = 0; j < dims; ++j) {
        SynthContinuous c{"x" + std::to_string(j), {}, std::vector<double>(classes, 1.0), false};
        for (std::size_t k = 0; k < classes; ++k) c.mean.push_back(separation * normal(rng));
        s.base.push_back(std::move(c));
    }
    return s;
}

struct NoiseResult {
    std::vector<int> labels;
    std::vector<std::size_t> flipped;  // ascending row indices
};

/// Flips exactly floor(rate * n) distinct rows, each to a uniformly chosen
/// different class. `num_classes` = 0 infers max label + 1.
inline NoiseResult inject_noise(std::span<const int> labels, double rate, std::uint64_t seed,
                                std::size_t num_classes = 0) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("noise rate must be in [0, 1)");
    const std::size_t k = num_classes ? num_classes : count_classes(labels);
    NoiseResult out{std::vector<int>(labels.begin(), labels.end()), {}};
    const auto n_flip = static_cast<std::size_t>(std::floor(rate * static_cast<double>(labels.size())));
    if (n_flip == 0) return out;
    if (k < 2) throw ConfigError("noise injection needs at least 2 classes");
    Rng rng = make_rng(seed, 0x6e6f6973);
    auto order = permutation(labels.size(), rng);
    out.flipped.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_flip));
    std::sort(out.flipped.begin(), out.flipped.end());
    for (auto i : out.flipped) {
        auto c = static_cast<int>(uniform_index(rng, k - 1));
        if (c >= out.labels[i]) ++c;
        out.labels[i] = c;
    }
    return out;
}

struct Split {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;
};

/// Stratified split: round(fraction * n_c) rows of each class (at least one)
/// go to the labeled side. Both index lists are ascending.
inline Split stratified_split(std::span<const int> labels, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("labeled fraction must be in (0, 1)");
    const std::size_t k = count_classes(labels);
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    Rng rng = make_rng(seed, 0x73706c);
    Split s;
    for (auto& rows : by_class) {
        if (rows.empty()) continue;
        shuffle(rows, rng);
        auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
        take = std::clamp<std::size_t>(take, 1, rows.size());
        s.labeled.insert(s.labeled.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
        s.unlabeled.insert(s.unlabeled.end(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end());
    }
    std::sort(s.labeled.begin(), s.labeled.end());
    std::sort(s.unlabeled.begin(), s.unlabeled.end());
    return s;
}

}  // namespace ssltraffic::synth
