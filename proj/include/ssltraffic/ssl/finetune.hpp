#pragma once

// Freeze-unfreeze fine-tuning of encoder + classifier head, and pseudo-label
// inference. Shared by both self-supervised branches.

#include <span>
#include <vector>

#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/train.hpp"

namespace ssltraffic::ssl {

struct FinetuneOptions {
    std::size_t epochs = 100;
    /// Epochs with the encoder frozen; negative means 20% of `epochs`.
    long frozen_epochs = -1;
    std::size_t batch_size = 128;
    nn::AdamOptions adam;
    std::uint64_t seed = 0;

    std::size_t frozen() const {
        if (frozen_epochs >= 0) return static_cast<std::size_t>(frozen_epochs);
        return static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(epochs)));
    }
};

/// Classifier head on top of a latent code: hidden ReLU layers then softmax.
inline nn::MlpModel make_head(std::size_t latent, std::span<const std::size_t> hidden, std::size_t classes,
                              double dropout, Rng& rng) {
    return nn::make_mlp(latent, hidden, classes, nn::Activation::softmax, dropout, rng);
}

namespace detail {
inline void check_labels(std::span<const int> labels, std::size_t classes) {
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw ConfigError("label " + std::to_string(l) + " does not fit a " + std::to_string(classes) +
                              "-class head");
}

inline std::vector<double> run_phase(nn::MlpModel& encoder, nn::MlpModel& head, const nn::Matrix& inputs,
                                     std::span<const int> labels, const FinetuneOptions& o, std::size_t epochs,
                                     bool freeze_encoder, std::uint64_t stream) {
    if (head.in_width() != encoder.out_width()) throw ConfigError("head input width != encoder latent width");
    check_labels(labels, head.out_width());
    if (epochs == 0) return {};
    nn::MlpModel full = nn::concat(encoder, head);
    const std::size_t e = encoder.layers.size();
    for (std::size_t i = 0; i < full.layers.size(); ++i) full.layers[i].trainable = !(freeze_encoder && i < e);
    nn::TrainOptions t{epochs, o.batch_size, o.adam, derive_seed(o.seed, stream)};
    auto history = nn::fit_classifier(full, inputs, labels, t);
    for (auto& l : full.layers) l.trainable = true;
    encoder = nn::slice_layers(full, 0, e);
    head = nn::slice_layers(full, e, full.layers.size());
    return history;
}
}  // namespace detail

/// Phase 1: only the head trains; encoder parameters stay bitwise fixed.
inline std::vector<double> finetune_frozen_phase(nn::MlpModel& encoder, nn::MlpModel& head, const nn::Matrix& inputs,
                                                 std::span<const int> labels, const FinetuneOptions& o) {
    return detail::run_phase(encoder, head, inputs, labels, o, o.frozen(), true, 1);
}

/// Phase 2: encoder and head train jointly.
inline std::vector<double> finetune_joint_phase(nn::MlpModel& encoder, nn::MlpModel& head, const nn::Matrix& inputs,
                                                std::span<const int> labels, const FinetuneOptions& o) {
    return detail::run_phase(encoder, head, inputs, labels, o, o.epochs - o.frozen(), false, 2);
}

/// Both phases; returns the per-epoch CE of the whole schedule.
inline std::vector<double> finetune(nn::MlpModel& encoder, nn::MlpModel& head, const nn::Matrix& inputs,
                                    std::span<const int> labels, const FinetuneOptions& o) {
    if (o.epochs > 0 && o.frozen() >= o.epochs)
        throw ConfigError("frozen epochs must be fewer than fine-tune epochs");
    if (inputs.rows() != labels.size()) throw DimensionError("fine-tune: label count != rows");
    auto h = finetune_frozen_phase(encoder, head, inputs, labels, o);
    const auto h2 = finetune_joint_phase(encoder, head, inputs, labels, o);
    h.insert(h.end(), h2.begin(), h2.end());
    return h;
}

struct PseudoLabels {
    std::vector<int> labels;
    nn::Matrix probs;
};

/// Row-wise argmax of head(encoder(x)); ties go to the lowest class index.
inline PseudoLabels pseudo_label(const nn::MlpModel& encoder, const nn::MlpModel& head, const nn::Matrix& inputs) {
    PseudoLabels out;
    out.probs = nn::predict_proba(nn::concat(encoder, head), inputs);
    out.labels = nn::argmax_rows(out.probs);
    return out;
}

}  // namespace ssltraffic::ssl
