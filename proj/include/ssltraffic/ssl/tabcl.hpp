#pragma once

// Tabular contrastive learning branch: class-conditioned replacement views
// with constraint projection, dual-head NT-Xent pretraining, periodic
// linear-probe refresh of the conditioning labels, then fine-tuning.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssltraffic/constraints.hpp"
#include "ssltraffic/dataset.hpp"
#include "ssltraffic/nn/checkpoint.hpp"
#include "ssltraffic/nn/train.hpp"
#include "ssltraffic/ssl/finetune.hpp"

namespace ssltraffic::ssl {

struct TabclConfig {
    std::vector<std::size_t> hidden{256, 128, 64};
    std::size_t latent = 128;
    std::size_t projection_dim = 128;
    std::vector<std::size_t> head_hidden{64};
    double dropout = 0.1;
    double learning_rate = 5e-4;
    double weight_decay = 1e-5;
    std::size_t batch_size = 256;
    std::size_t epochs = 100;
    double replacement_rate = 0.15;
    double tau_cont = 0.5;
    double tau_cat = 0.2;
    double lambda = 0.5;
    std::size_t refresh_interval = 10;
    double refresh_tolerance = 0.01;
    std::size_t max_refresh_rounds = 5;
    std::size_t probe_epochs = 50;
    double probe_learning_rate = 1e-2;
    std::size_t probe_batch_size = 64;
    std::size_t finetune_epochs = 100;
    long frozen_epochs = -1;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(replacement_rate > 0.0 && replacement_rate < 1.0)) throw ConfigError("tabcl: r must be in (0, 1)");
        if (!(tau_cont > 0.0) || !(tau_cat > 0.0)) throw ConfigError("tabcl: temperatures must be > 0");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("tabcl: lambda must be in [0, 1]");
        if (latent == 0 || projection_dim == 0 || batch_size == 0 || probe_batch_size == 0)
            throw ConfigError("tabcl: widths and batch sizes must be > 0");
        if (refresh_interval == 0) throw ConfigError("tabcl: refresh interval must be > 0");
        if (!(refresh_tolerance >= 0.0)) throw ConfigError("tabcl: refresh tolerance must be >= 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("tabcl: dropout must be in [0, 1)");
        if (!(learning_rate > 0.0) || !(probe_learning_rate > 0.0))
            throw ConfigError("tabcl: learning rates must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("tabcl: weight decay must be >= 0");
        if (finetune_epochs > 0 && frozen_epochs >= static_cast<long>(finetune_epochs))
            throw ConfigError("tabcl: frozen epochs must be fewer than fine-tune epochs");
    }

    FinetuneOptions finetune_options() const {
        return {finetune_epochs, frozen_epochs, batch_size, {learning_rate, weight_decay}, derive_seed(seed, 2)};
    }
};

// ---------------------------------------------------------------------------
// NT-Xent

inline double cosine(std::span<const double> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) throw NumericError("nt_xent: zero-norm vector");
    return ab / std::sqrt(aa * bb);
}

/// -log( e^{sim(vi,vj)/tau} / (e^{sim(vi,vj)/tau} + sum_k e^{sim(vi,nk)/tau}) )
/// with cosine similarity; `negatives` holds one vector per row.
inline double nt_xent(std::span<const double> vi, std::span<const double> vj, const nn::Matrix& negatives,
                      double tau) {
    if (!(tau > 0.0)) throw ConfigError("nt_xent: temperature must be > 0");
    const double pos = cosine(vi, vj) / tau;
    double mx = pos;
    std::vector<double> s;
    for (std::size_t k = 0; k < negatives.rows(); ++k) {
        s.push_back(cosine(vi, negatives.row(k)) / tau);
        mx = std::max(mx, s.back());
    }
    double z = std::exp(pos - mx);
    for (double v : s) z += std::exp(v - mx);
    return -(pos - mx - std::log(z));
}

struct ContrastiveLoss {
    double loss = 0.0;
    nn::Matrix grad1, grad2;  // dL/dV1, dL/dV2
};

/// Symmetric NT-Xent over a batch of N view pairs: each of the 2N projected
/// views anchors once, its counterpart is the positive and the other 2N-2
/// views are negatives; the 2N terms are averaged.
inline ContrastiveLoss nt_xent_batch(const nn::Matrix& v1, const nn::Matrix& v2, double tau) {
    nn::require_same_shape(v1, v2, "nt_xent_batch");
    if (!(tau > 0.0)) throw ConfigError("nt_xent: temperature must be > 0");
    const std::size_t n = v1.rows(), p = v1.cols(), m = 2 * n;
    ContrastiveLoss out{0.0, nn::Matrix(n, p), nn::Matrix(n, p)};
    if (n == 0) return out;
    nn::Matrix u = nn::vstack(v1, v2);
    std::vector<double> norm(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (double v : u.row(i)) s += v * v;
        if (s == 0.0) throw NumericError("nt_xent: zero-norm projection");
        norm[i] = std::sqrt(s);
        for (double& v : u.row(i)) v /= norm[i];
    }
    nn::Matrix sim = nn::matmul_nt(u, u);
    nn::Matrix g(m, m);  // dL/dsim
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t a = 0; a < m; ++a) {
        const std::size_t pos = a < n ? a + n : a - n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < m; ++k)
            if (k != a) mx = std::max(mx, sim(a, k) / tau);
        double z = 0.0;
        for (std::size_t k = 0; k < m; ++k)
            if (k != a) z += std::exp(sim(a, k) / tau - mx);
        out.loss += (std::log(z) + mx - sim(a, pos) / tau) * inv;
        for (std::size_t k = 0; k < m; ++k) {
            if (k == a) continue;
            const double pk = std::exp(sim(a, k) / tau - mx) / z;
            g(a, k) = (pk - (k == pos ? 1.0 : 0.0)) * inv / tau;
        }
    }
    // sim = U U^T  =>  dL/dU = (G + G^T) U
    nn::Matrix gs(m, m);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t k = 0; k < m; ++k) gs(a, k) = g(a, k) + g(k, a);
    const nn::Matrix du = nn::matmul(gs, u);
    // Through the normalization u = v / |v|.
    for (std::size_t i = 0; i < m; ++i) {
        const auto ui = u.row(i);
        const auto dui = du.row(i);
        double dot = 0.0;
        for (std::size_t c = 0; c < p; ++c) dot += ui[c] * dui[c];
        auto dst = i < n ? out.grad1.row(i) : out.grad2.row(i - n);
        for (std::size_t c = 0; c < p; ++c) dst[c] = (dui[c] - ui[c] * dot) / norm[i];
    }
    return out;
}

struct TabclLoss {
    double cont = 0.0, cat = 0.0, total = 0.0;
    ContrastiveLoss cont_head, cat_head;
};

/// L = lambda * L_cont + (1 - lambda) * L_cat.
inline TabclLoss tabcl_batch_loss(const nn::Matrix& cont1, const nn::Matrix& cont2, const nn::Matrix& cat1,
                                  const nn::Matrix& cat2, const TabclConfig& cfg) {
    TabclLoss l;
    l.cont_head = nt_xent_batch(cont1, cont2, cfg.tau_cont);
    l.cat_head = nt_xent_batch(cat1, cat2, cfg.tau_cat);
    l.cont = l.cont_head.loss;
    l.cat = l.cat_head.loss;
    l.total = cfg.lambda * l.cont + (1.0 - cfg.lambda) * l.cat;
    return l;
}

// ---------------------------------------------------------------------------
// Pseudo-label state and views

struct PseudoLabelState {
    std::vector<int> labels;                        // one per D_l row
    std::size_t round = 0;
    std::vector<std::vector<std::size_t>> buckets;  // rows per class

    void rebuild(std::size_t classes) {
        buckets.assign(classes, {});
        for (std::size_t i = 0; i < labels.size(); ++i) buckets[static_cast<std::size_t>(labels[i])].push_back(i);
    }
};

struct ViewStats {
    std::size_t views = 0;
    std::size_t marginal_fallbacks = 0;
};

struct ViewPair {
    std::vector<double> raw1, raw2;  // after replacement, before projection
    std::vector<std::size_t> idx1, idx2;
    std::vector<double> view1, view2;  // after projection
};

/// Number of replaced coordinates per view.
inline std::size_t replaced_count(double r, std::size_t d) {
    return std::min(d, static_cast<std::size_t>(std::ceil(r * static_cast<double>(d) - 1e-12)));
}

namespace detail {
inline std::vector<std::size_t> choose(std::vector<std::size_t> from, std::size_t k, Rng& rng) {
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < k; ++i) std::swap(from[i], from[i + uniform_index(rng, from.size() - i)]);
    from.resize(k);
    std::sort(from.begin(), from.end());
    return from;
}

inline void project_standardized(std::vector<double>& row, const ConstraintSet& cons,
                                 const Standardization* st, const std::vector<std::size_t>& cont_cols) {
    if (cons.empty()) return;
    std::vector<double> raw(cont_cols.size());
    for (std::size_t k = 0; k < cont_cols.size(); ++k)
        raw[k] = st ? st->to_raw(k, row[cont_cols[k]]) : row[cont_cols[k]];
    project_in_place(cons, raw);
    for (const auto& c : cons.constraints())
        row[cont_cols[c.a]] = st ? st->to_standard(c.a, raw[c.a]) : raw[c.a];
}
}  // namespace detail

/// Two views of D_l row `anchor`: each replaces ceil(r*d) coordinates with
/// values of random rows of the anchor's pseudo-class (the marginal pool if
/// that class is empty); the second index set avoids the first when enough
/// coordinates remain. Derived continuous features are then recomputed in
/// raw units.
inline ViewPair make_views(const Dataset& ds_l, std::size_t anchor, const PseudoLabelState& state,
                           const ConstraintSet& cons, double r, Rng& rng, ViewStats* stats = nullptr) {
    const std::size_t d = ds_l.schema.width();
    const std::size_t m = replaced_count(r, d);
    const auto& bucket = state.buckets.at(static_cast<std::size_t>(state.labels.at(anchor)));
    const bool fallback = bucket.empty();
    auto draw_row = [&]() {
        return fallback ? uniform_index(rng, ds_l.rows()) : bucket[uniform_index(rng, bucket.size())];
    };
    std::vector<std::size_t> all(d);
    for (std::size_t j = 0; j < d; ++j) all[j] = j;

    ViewPair v;
    v.idx1 = detail::choose(all, m, rng);
    if (d - m >= m) {
        std::vector<std::size_t> rest;
        std::set_difference(all.begin(), all.end(), v.idx1.begin(), v.idx1.end(), std::back_inserter(rest));
        v.idx2 = detail::choose(rest, m, rng);
    } else {
        v.idx2 = detail::choose(all, m, rng);
    }
    const auto anchor_row = ds_l.features.row(anchor);
    v.raw1.assign(anchor_row.begin(), anchor_row.end());
    v.raw2 = v.raw1;
    for (auto j : v.idx1) v.raw1[j] = ds_l.features(draw_row(), j);
    for (auto j : v.idx2) v.raw2[j] = ds_l.features(draw_row(), j);

    const Standardization* st = ds_l.standardization ? &*ds_l.standardization : nullptr;
    const auto cont_cols = ds_l.schema.continuous_columns();
    v.view1 = v.raw1;
    v.view2 = v.raw2;
    detail::project_standardized(v.view1, cons, st, cont_cols);
    detail::project_standardized(v.view2, cons, st, cont_cols);
    if (stats) {
        ++stats->views;
        stats->marginal_fallbacks += fallback ? 1 : 0;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Probe, bootstrap, refresh

/// Multinomial logistic regression (one softmax layer) fit with Adam.
inline nn::MlpModel fit_linear_probe(const nn::Matrix& x, std::span<const int> labels, std::size_t classes,
                                     const TabclConfig& cfg, std::uint64_t stream) {
    Rng rng = make_rng(cfg.seed, stream);
    const std::vector<std::size_t> none;
    auto probe = nn::make_mlp(x.cols(), none, classes, nn::Activation::softmax, 0.0, rng);
    nn::TrainOptions t{cfg.probe_epochs, cfg.probe_batch_size, {cfg.probe_learning_rate, 0.0},
                       derive_seed(cfg.seed, stream)};
    nn::fit_classifier(probe, x, labels, t);
    return probe;
}

inline void require_all_classes(std::span<const int> labels, std::size_t classes) {
    std::vector<std::size_t> count(classes, 0);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw ConfigError("label " + std::to_string(l) + " outside 0.." + std::to_string(classes - 1));
        ++count[static_cast<std::size_t>(l)];
    }
    for (std::size_t k = 0; k < classes; ++k)
        if (count[k] == 0) throw ConfigError("labeled set has no sample of class " + std::to_string(k));
}

/// Initial pseudo-labels for D_l from a logistic probe on D_s inputs.
inline PseudoLabelState bootstrap(const Dataset& ds_s, const Dataset& ds_l, std::size_t classes,
                                  const TabclConfig& cfg) {
    if (!ds_s.labels) throw DataError("tabcl bootstrap: labeled set has no labels");
    require_all_classes(*ds_s.labels, classes);
    const auto probe = fit_linear_probe(encode_inputs(ds_s), *ds_s.labels, classes, cfg, 0x626f6f74);
    PseudoLabelState s;
    s.labels = nn::argmax_rows(nn::predict(probe, encode_inputs(ds_l)));
    s.rebuild(classes);
    return s;
}

/// Refits the probe on encoder embeddings of D_s and relabels D_l. Returns
/// the fraction of D_l rows whose label changed.
inline double refresh(const nn::MlpModel& encoder, const Dataset& ds_s, const Dataset& ds_l, PseudoLabelState& state,
                      std::size_t classes, const TabclConfig& cfg) {
    const auto probe =
        fit_linear_probe(nn::predict(encoder, encode_inputs(ds_s)), *ds_s.labels, classes, cfg, 0x72656672);
    auto next = nn::argmax_rows(nn::predict(probe, nn::predict(encoder, encode_inputs(ds_l))));
    std::size_t changed = 0;
    for (std::size_t i = 0; i < next.size(); ++i) changed += next[i] != state.labels[i];
    state.labels = std::move(next);
    ++state.round;
    state.rebuild(classes);
    return state.labels.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(state.labels.size());
}

// ---------------------------------------------------------------------------
// Pretraining

struct TabclEpoch {
    double cont = 0.0, cat = 0.0, total = 0.0;
    long refresh_round = -1;       // round number if a refresh ran after this epoch
    double change_fraction = -1.0;
};

struct TabclModel {
    nn::MlpModel encoder;
    nn::MlpModel head_cont, head_cat;
    nn::MlpModel head;  // classifier, empty until fine-tuned
};

struct TabclPretrainResult {
    TabclModel model;
    PseudoLabelState state;
    std::vector<TabclEpoch> history;
    ViewStats view_stats;
};

inline TabclModel make_tabcl(const Schema& schema, const TabclConfig& cfg) {
    Rng rng = make_rng(cfg.seed, 0x7463);
    TabclModel m;
    m.encoder = nn::make_mlp(schema.encoded_width(), cfg.hidden, cfg.latent, nn::Activation::linear, cfg.dropout, rng);
    const std::vector<std::size_t> mid{cfg.latent};
    m.head_cont = nn::make_mlp(cfg.latent, mid, cfg.projection_dim, nn::Activation::linear, 0.0, rng);
    m.head_cat = nn::make_mlp(cfg.latent, mid, cfg.projection_dim, nn::Activation::linear, 0.0, rng);
    return m;
}

inline TabclPretrainResult pretrain_tabcl(const Dataset& ds_l, const Dataset& ds_s, const ConstraintSet& cons,
                                          std::size_t classes, const TabclConfig& cfg) {
    cfg.validate();
    if (ds_l.rows() == 0) throw DataError("tabcl pretrain: unlabeled set is empty");
    if (!(ds_l.schema == ds_s.schema)) throw DataError("tabcl pretrain: D_s and D_l schemas differ");
    TabclPretrainResult res;
    res.model = make_tabcl(ds_l.schema, cfg);
    res.state = bootstrap(ds_s, ds_l, classes, cfg);
    auto& enc = res.model.encoder;
    auto& hc = res.model.head_cont;
    auto& hk = res.model.head_cat;
    const nn::AdamOptions adam{cfg.learning_rate, cfg.weight_decay};
    nn::AdamState s_enc(enc, adam), s_hc(hc, adam), s_hk(hk, adam);
    const std::size_t n = ds_l.rows(), w = ds_l.schema.encoded_width();
    bool refreshing = true;
    Rng order_rng = make_rng(cfg.seed, 0x6f72);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = permutation(n, order_rng);
        const std::uint64_t epoch_seed = derive_seed(cfg.seed, 0x10000 + epoch);
        Rng dropout_rng = make_rng(epoch_seed, 0x64);
        TabclEpoch rec;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(n, start + cfg.batch_size) - start;
            nn::Matrix x(2 * b, w);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t row = order[start + i];
                Rng rng = make_rng(epoch_seed, row);
                const auto v = make_views(ds_l, row, res.state, cons, cfg.replacement_rate, rng, &res.view_stats);
                encode_row(ds_l.schema, v.view1, x.row(i));
                encode_row(ds_l.schema, v.view2, x.row(b + i));
            }
            auto fe = nn::forward(enc, x, true, dropout_rng);
            const nn::Matrix& z = fe.output;
            auto fc = nn::forward(hc, z, true, dropout_rng);
            auto fk = nn::forward(hk, z, true, dropout_rng);
            const auto split = [&](const nn::Matrix& m, std::size_t lo) {
                std::vector<std::size_t> idx(b);
                for (std::size_t i = 0; i < b; ++i) idx[i] = lo + i;
                return m.gather_rows(idx);
            };
            const auto loss = tabcl_batch_loss(split(fc.output, 0), split(fc.output, b), split(fk.output, 0),
                                               split(fk.output, b), cfg);
            if (!std::isfinite(loss.total)) throw NumericError("tabcl: loss is not finite");
            nn::Matrix gc = nn::vstack(loss.cont_head.grad1, loss.cont_head.grad2);
            nn::Matrix gk = nn::vstack(loss.cat_head.grad1, loss.cat_head.grad2);
            for (double& v : gc.data()) v *= cfg.lambda;
            for (double& v : gk.data()) v *= 1.0 - cfg.lambda;
            auto grad_c = nn::backward(hc, fc.cache, gc, true);
            auto grad_k = nn::backward(hk, fk.cache, gk, true);
            nn::Matrix dz = grad_c.input;
            for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] += grad_k.input.data()[i];
            auto grad_e = nn::backward(enc, fe.cache, dz);
            nn::adam_step(hc, grad_c, s_hc);
            nn::adam_step(hk, grad_k, s_hk);
            nn::adam_step(enc, grad_e, s_enc);
            const double bw = static_cast<double>(b);
            rec.cont += loss.cont * bw;
            rec.cat += loss.cat * bw;
            rec.total += loss.total * bw;
        }
        rec.cont /= static_cast<double>(n);
        rec.cat /= static_cast<double>(n);
        rec.total /= static_cast<double>(n);
        if (refreshing && (epoch + 1) % cfg.refresh_interval == 0 && epoch + 1 < cfg.epochs) {
            rec.change_fraction = refresh(enc, ds_s, ds_l, res.state, classes, cfg);
            rec.refresh_round = static_cast<long>(res.state.round);
            if (rec.change_fraction < cfg.refresh_tolerance || res.state.round >= cfg.max_refresh_rounds)
                refreshing = false;
        }
        res.history.push_back(rec);
    }
    return res;
}

inline std::vector<double> finetune_tabcl(TabclModel& m, const Dataset& ds_s, std::size_t classes,
                                          const TabclConfig& cfg) {
    cfg.validate();
    if (!ds_s.labels) throw DataError("tabcl fine-tune: labeled set has no labels");
    if (m.head.layers.empty()) {
        Rng rng = make_rng(cfg.seed, 0x68656164);
        m.head = make_head(cfg.latent, cfg.head_hidden, classes, cfg.dropout, rng);
    } else if (m.head.out_width() != classes) {
        throw ConfigError("tabcl fine-tune: head class count mismatch");
    }
    return finetune(m.encoder, m.head, encode_inputs(ds_s), *ds_s.labels, cfg.finetune_options());
}

inline PseudoLabels pseudo_label_tabcl(const TabclModel& m, const Dataset& ds) {
    if (m.head.layers.empty()) throw StateError("tabcl pseudo-label: model has not been fine-tuned");
    return pseudo_label(m.encoder, m.head, encode_inputs(ds));
}

inline void write_tabcl_history(const std::vector<TabclEpoch>& h, std::ostream& out) {
    out << "epoch,L_cont,L_cat,L_TabCL,refresh_round,change_fraction\n";
    for (std::size_t i = 0; i < h.size(); ++i) {
        out << i + 1 << ',' << csv_detail::format_double(h[i].cont) << ',' << csv_detail::format_double(h[i].cat)
            << ',' << csv_detail::format_double(h[i].total) << ',';
        if (h[i].refresh_round >= 0) out << h[i].refresh_round << ',' << csv_detail::format_double(h[i].change_fraction);
        else out << ',';
        out << '\n';
    }
}

inline nlohmann::json to_json(const TabclModel& m) {
    nlohmann::json j{{"format", "ssltraffic-tabcl"},      {"version", 1},
                     {"encoder", nn::to_json(m.encoder)}, {"head_cont", nn::to_json(m.head_cont)},
                     {"head_cat", nn::to_json(m.head_cat)}};
    if (!m.head.layers.empty()) j["head"] = nn::to_json(m.head);
    return j;
}

inline TabclModel tabcl_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "ssltraffic-tabcl") throw DataError("not a TabCL checkpoint");
    TabclModel m;
    m.encoder = nn::mlp_from_json(j.at("encoder"));
    m.head_cont = nn::mlp_from_json(j.at("head_cont"));
    m.head_cat = nn::mlp_from_json(j.at("head_cat"));
    if (j.contains("head")) m.head = nn::mlp_from_json(j.at("head"));
    return m;
}

}  // namespace ssltraffic::ssl
