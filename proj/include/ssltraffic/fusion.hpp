#pragma once

// Consolidates two branches' pseudo-labels per flow: agreement, then higher
// top-1 confidence, then larger margin, with branch a winning exact ties.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "ssltraffic/dataset.hpp"
#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/matrix.hpp"

namespace ssltraffic {

struct BranchPrediction {
    nn::Matrix probs;
    std::vector<int> labels;
    std::vector<double> confidence;  // top-1 probability
    std::vector<double> margin;      // top-1 minus top-2

    std::size_t rows() const noexcept { return labels.size(); }
    std::size_t classes() const noexcept { return probs.cols(); }
};

/// Labels, confidences and margins of a probability matrix.
inline BranchPrediction summarize(const nn::Matrix& probs) {
    if (probs.cols() == 0) throw DataError("summarize: probability matrix has no columns");
    BranchPrediction b{probs, {}, {}, {}};
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = probs.row(r);
        double sum = 0.0;
        std::size_t best = 0;
        for (std::size_t k = 0; k < row.size(); ++k) {
            sum += row[k];
            if (row[k] > row[best]) best = k;
        }
        if (!(std::abs(sum - 1.0) <= 1e-6))
            throw DataError("summarize: probability row " + std::to_string(r) + " sums to " + std::to_string(sum));
        double second = 0.0;
        bool have_second = false;
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k == best) continue;
            if (!have_second || row[k] > second) second = row[k];
            have_second = true;
        }
        b.labels.push_back(static_cast<int>(best));
        b.confidence.push_back(row[best]);
        b.margin.push_back(have_second ? row[best] - second : row[best]);
    }
    return b;
}

enum class Provenance { agree, conf_a, conf_b, margin_a, margin_b };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::agree: return "agree";
        case Provenance::conf_a: return "conf_a";
        case Provenance::conf_b: return "conf_b";
        case Provenance::margin_a: return "margin_a";
        case Provenance::margin_b: return "margin_b";
    }
    return "?";
}

struct FusionResult {
    std::vector<int> labels;
    std::vector<Provenance> provenance;

    std::size_t count(Provenance p) const {
        std::size_t n = 0;
        for (auto q : provenance) n += q == p;
        return n;
    }
};

/// Per-row decision, comparisons exact:
///   a.label == b.label           -> shared label (agree)
///   s_a > s_b / s_b > s_a        -> that branch (conf_a / conf_b)
///   s_a == s_b, m_a >= m_b       -> a (margin_a), else b (margin_b)
inline FusionResult fuse(const BranchPrediction& a, const BranchPrediction& b) {
    if (a.rows() != b.rows() || a.classes() != b.classes())
        throw DimensionError("fuse: branch predictions differ in rows or classes");
    FusionResult f;
    f.labels.reserve(a.rows());
    f.provenance.reserve(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        Provenance p;
        if (a.labels[i] == b.labels[i]) p = Provenance::agree;
        else if (a.confidence[i] > b.confidence[i]) p = Provenance::conf_a;
        else if (b.confidence[i] > a.confidence[i]) p = Provenance::conf_b;
        else if (a.margin[i] >= b.margin[i]) p = Provenance::margin_a;
        else p = Provenance::margin_b;
        const bool take_b = p == Provenance::conf_b || p == Provenance::margin_b;
        f.labels.push_back(take_b ? b.labels[i] : a.labels[i]);
        f.provenance.push_back(p);
    }
    return f;
}

/// CSV: row,pseudo_label,s_AE,s_TabCL,m_AE,m_TabCL,provenance (a = AE, b = TabCL).
inline void write_fusion_csv(const BranchPrediction& a, const BranchPrediction& b, const FusionResult& f,
                             std::ostream& out) {
    using csv_detail::format_double;
    out << "row,pseudo_label,s_AE,s_TabCL,m_AE,m_TabCL,provenance\n";
    for (std::size_t i = 0; i < f.labels.size(); ++i)
        out << i << ',' << f.labels[i] << ',' << format_double(a.confidence[i]) << ','
            << format_double(b.confidence[i]) << ',' << format_double(a.margin[i]) << ','
            << format_double(b.margin[i]) << ',' << to_string(f.provenance[i]) << '\n';
}

}  // namespace ssltraffic
