#pragma once

// Constraint-aware autoencoder branch: pretraining on unlabeled flows with
// mixed reconstruction loss (MSE on continuous columns, CE per categorical
// field) plus an L1 constraint penalty, then freeze-unfreeze fine-tuning.

#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssltraffic/constraints.hpp"
#include "ssltraffic/dataset.hpp"
#include "ssltraffic/nn/checkpoint.hpp"
#include "ssltraffic/nn/train.hpp"
#include "ssltraffic/ssl/finetune.hpp"

namespace ssltraffic::ssl {

struct AeConfig {
    std::vector<std::size_t> hidden{256, 128, 64};
    std::size_t latent = 128;
    std::vector<std::size_t> head_hidden{64};
    double dropout = 0.1;
    double learning_rate = 5e-4;
    double weight_decay = 1e-5;
    std::size_t batch_size = 128;
    std::size_t pretrain_epochs = 100;
    std::size_t finetune_epochs = 100;
    long frozen_epochs = -1;  // negative: 20% of finetune_epochs
    double phi = 0.5;         // multiplies every constraint weight
    std::uint64_t seed = 1;

    void validate() const {
        if (latent == 0 || batch_size == 0) throw ConfigError("ae: latent width and batch size must be > 0");
        for (auto h : hidden)
            if (h == 0) throw ConfigError("ae: hidden widths must be > 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("ae: dropout must be in [0, 1)");
        if (!(learning_rate > 0.0)) throw ConfigError("ae: learning rate must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("ae: weight decay must be >= 0");
        if (!(phi >= 0.0)) throw ConfigError("ae: phi must be >= 0");
        if (finetune_epochs > 0 && frozen_epochs >= static_cast<long>(finetune_epochs))
            throw ConfigError("ae: frozen epochs must be fewer than fine-tune epochs");
    }

    FinetuneOptions finetune_options() const {
        return {finetune_epochs, frozen_epochs, batch_size, {learning_rate, weight_decay}, derive_seed(seed, 2)};
    }
};

struct AeModel {
    nn::MlpModel encoder;
    nn::MlpModel decoder;  // linear output: continuous block then one logit group per categorical field
    nn::MlpModel head;     // empty until fine-tuned
};

/// Where each part of the encoded row lives.
struct AeLayout {
    std::size_t continuous = 0;
    std::vector<std::size_t> group_offset;  // start of each categorical block
    std::vector<std::size_t> group_size;

    explicit AeLayout(const Schema& s) : continuous(s.continuous_width()) {
        std::size_t off = continuous;
        for (auto j : s.categorical_columns()) {
            group_offset.push_back(off);
            group_size.push_back(s.features[j].vocabulary.size());
            off += s.features[j].vocabulary.size();
        }
    }
    std::size_t width() const {
        return group_offset.empty() ? continuous : group_offset.back() + group_size.back();
    }
};

struct AeLossTerms {
    double mse = 0.0;
    double ce_cat = 0.0;
    double cons = 0.0;
    double total() const { return mse + ce_cat + cons; }
};

struct AeLoss {
    AeLossTerms terms;
    nn::Matrix grad;  // dL/d decoder output
};

/// Loss of decoder outputs `recon` against encoded inputs `target`
/// (standardized continuous block + one-hot blocks). The constraint term is
/// evaluated on destandardized continuous reconstructions, each residual
/// divided by the raw std of its derived feature. `st` may be null (raw units).
inline AeLoss ae_loss(const nn::Matrix& recon, const nn::Matrix& target, const AeLayout& layout,
                      const ConstraintSet& cons, const Standardization* st) {
    nn::require_same_shape(recon, target, "ae_loss");
    if (recon.cols() != layout.width()) throw DimensionError("ae_loss: width does not match the layout");
    const std::size_t n = recon.rows();
    AeLoss out{{}, nn::Matrix(n, recon.cols())};
    if (n == 0) return out;
    const double inv_n = 1.0 / static_cast<double>(n);
    const std::size_t dc = layout.continuous;

    if (dc > 0) {
        const double scale = 1.0 / static_cast<double>(n * dc);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < dc; ++k) {
                const double d = recon(r, k) - target(r, k);
                out.terms.mse += d * d * scale;
                out.grad(r, k) = 2.0 * d * scale;
            }
    }

    std::vector<double> logp;
    for (std::size_t g = 0; g < layout.group_offset.size(); ++g) {
        const std::size_t off = layout.group_offset[g], sz = layout.group_size[g];
        logp.resize(sz);
        for (std::size_t r = 0; r < n; ++r) {
            const auto in = recon.row(r).subspan(off, sz);
            nn::log_softmax_row(in, logp);
            const auto t = target.row(r).subspan(off, sz);
            auto gr = out.grad.row(r).subspan(off, sz);
            for (std::size_t k = 0; k < sz; ++k) {
                out.terms.ce_cat -= t[k] * logp[k] * inv_n;
                gr[k] = (std::exp(logp[k]) - t[k]) * inv_n;
            }
        }
    }

    bool any_phi = false;
    for (const auto& c : cons.constraints()) any_phi = any_phi || c.phi > 0.0;
    if (any_phi && dc > 0) {
        if (cons.width() != dc) throw DimensionError("ae_loss: constraint width != continuous width");
        nn::Matrix raw(n, dc);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < dc; ++k) raw(r, k) = st ? st->to_raw(k, recon(r, k)) : recon(r, k);
        std::vector<double> scale;
        for (const auto& c : cons.constraints()) scale.push_back(st ? 1.0 / st->stddev[c.a] : 1.0);
        const auto pen = penalty(cons, raw, scale);
        out.terms.cons = pen.loss;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < dc; ++k) out.grad(r, k) += pen.grad(r, k) * (st ? st->stddev[k] : 1.0);
    }
    return out;
}

struct AePretrainResult {
    AeModel model;
    std::vector<AeLossTerms> history;  // per-epoch, row-weighted means
};

inline AeModel make_autoencoder(const Schema& schema, const AeConfig& cfg) {
    const std::size_t w = schema.encoded_width();
    Rng rng = make_rng(cfg.seed, 0x6165);
    AeModel m;
    m.encoder = nn::make_mlp(w, cfg.hidden, cfg.latent, nn::Activation::linear, cfg.dropout, rng);
    const std::vector<std::size_t> rev(cfg.hidden.rbegin(), cfg.hidden.rend());
    m.decoder = nn::make_mlp(cfg.latent, rev, w, nn::Activation::linear, cfg.dropout, rng);
    return m;
}

/// Unsupervised pretraining on (standardized) D_l.
inline AePretrainResult pretrain_ae(const Dataset& ds, const ConstraintSet& cons, const AeConfig& cfg) {
    cfg.validate();
    if (ds.rows() == 0) throw DataError("ae pretrain: dataset is empty");
    if (ds.schema.continuous_width() == 0) throw DataError("ae pretrain: schema has no continuous column");
    const AeLayout layout(ds.schema);
    const ConstraintSet scaled = cons.scaled(cfg.phi);
    const Standardization* st = ds.standardization ? &*ds.standardization : nullptr;
    const nn::Matrix inputs = encode_inputs(ds);

    AePretrainResult res;
    res.model = make_autoencoder(ds.schema, cfg);
    nn::MlpModel ae = nn::concat(res.model.encoder, res.model.decoder);
    const std::size_t e = res.model.encoder.layers.size();

    AeLossTerms acc;
    nn::TrainOptions opts{1, cfg.batch_size, {cfg.learning_rate, cfg.weight_decay}, derive_seed(cfg.seed, 1)};
    nn::AdamState state(ae, opts.adam);
    // One call per epoch so the per-epoch term breakdown can be recorded; the
    // seed advances with the epoch so shuffles differ.
    for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        acc = {};
        opts.seed = derive_seed(cfg.seed, 1000 + epoch);
        nn::train_minibatch(
            ae, inputs, opts,
            [&](const nn::Matrix& out, std::span<const std::size_t> idx) {
                const auto l = ae_loss(out, inputs.gather_rows(idx), layout, scaled, st);
                const double b = static_cast<double>(idx.size());
                acc.mse += l.terms.mse * b;
                acc.ce_cat += l.terms.ce_cat * b;
                acc.cons += l.terms.cons * b;
                return nn::LossResult{l.terms.total(), l.grad};
            },
            &state);
        const double inv = 1.0 / static_cast<double>(ds.rows());
        res.history.push_back({acc.mse * inv, acc.ce_cat * inv, acc.cons * inv});
    }
    res.model.encoder = nn::slice_layers(ae, 0, e);
    res.model.decoder = nn::slice_layers(ae, e, ae.layers.size());
    return res;
}

/// Decoder outputs for `ds` (inference mode).
inline nn::Matrix reconstruct(const AeModel& m, const Dataset& ds) {
    return nn::predict(nn::concat(m.encoder, m.decoder), encode_inputs(ds));
}

/// Attaches a fresh K-class head and runs the freeze-unfreeze schedule on D_s.
inline std::vector<double> finetune_ae(AeModel& m, const Dataset& ds_s, std::size_t classes, const AeConfig& cfg) {
    cfg.validate();
    if (!ds_s.labels) throw DataError("ae fine-tune: labeled set has no labels");
    if (m.head.layers.empty()) {
        Rng rng = make_rng(cfg.seed, 0x68656164);
        m.head = make_head(cfg.latent, cfg.head_hidden, classes, cfg.dropout, rng);
    } else if (m.head.out_width() != classes) {
        throw ConfigError("ae fine-tune: head has " + std::to_string(m.head.out_width()) + " classes, expected " +
                          std::to_string(classes));
    }
    return finetune(m.encoder, m.head, encode_inputs(ds_s), *ds_s.labels, cfg.finetune_options());
}

inline PseudoLabels pseudo_label_ae(const AeModel& m, const Dataset& ds) {
    if (m.head.layers.empty()) throw StateError("ae pseudo-label: model has not been fine-tuned");
    return pseudo_label(m.encoder, m.head, encode_inputs(ds));
}

inline void write_ae_history(const std::vector<AeLossTerms>& h, std::ostream& out) {
    out << "epoch,mse,ce_cat,cons\n";
    for (std::size_t i = 0; i < h.size(); ++i)
        out << i + 1 << ',' << csv_detail::format_double(h[i].mse) << ',' << csv_detail::format_double(h[i].ce_cat)
            << ',' << csv_detail::format_double(h[i].cons) << '\n';
}

inline nlohmann::json to_json(const AeModel& m) {
    nlohmann::json j{{"format", "ssltraffic-ae"}, {"version", 1}, {"encoder", nn::to_json(m.encoder)},
                     {"decoder", nn::to_json(m.decoder)}};
    if (!m.head.layers.empty()) j["head"] = nn::to_json(m.head);
    return j;
}

inline AeModel ae_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "ssltraffic-ae") throw DataError("not an autoencoder checkpoint");
    AeModel m;
    m.encoder = nn::mlp_from_json(j.at("encoder"));
    m.decoder = nn::mlp_from_json(j.at("decoder"));
    if (j.contains("head")) m.head = nn::mlp_from_json(j.at("head"));
    return m;
}

}  // namespace ssltraffic::ssl
