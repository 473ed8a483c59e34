#pragma once

// Confusion matrices, per-class and aggregate classification metrics, and
// report writers (CSV, JSON, gnuplot data blocks).

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssltraffic/dataset.hpp"
#include "ssltraffic/errors.hpp"

namespace ssltraffic::eval {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;

    std::uint64_t operator()(std::size_t t, std::size_t p) const { return counts[t * classes + p]; }
    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
    if (truth.size() != pred.size()) throw DimensionError("confusion: true and predicted lengths differ");
    ConfusionMatrix cm{classes, std::vector<std::uint64_t>(classes * classes, 0)};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (int v : {truth[i], pred[i]})
            if (v < 0 || static_cast<std::size_t>(v) >= classes)
                throw DataError("confusion: label " + std::to_string(v) + " at row " + std::to_string(i) +
                                " outside 0.." + std::to_string(classes - 1));
        ++cm.counts[static_cast<std::size_t>(truth[i]) * classes + static_cast<std::size_t>(pred[i])];
    }
    return cm;
}

struct ClassMetrics {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::uint64_t support = 0;  // true-class count
    double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
    bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
};

struct Aggregate {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    Aggregate macro, weighted;
    double accuracy = 0.0;
    std::uint64_t total = 0;
};

/// One-vs-rest metrics per class. Undefined ratios are 0 and flagged.
inline MetricsReport metrics(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.total = cm.total();
    const std::size_t k = cm.classes;
    std::uint64_t trace = 0;
    for (std::size_t j = 0; j < k; ++j) {
        ClassMetrics m;
        m.tp = cm(j, j);
        for (std::size_t o = 0; o < k; ++o) {
            if (o == j) continue;
            m.fp += cm(o, j);
            m.fn += cm(j, o);
        }
        m.tn = r.total - m.tp - m.fp - m.fn;
        m.support = m.tp + m.fn;
        trace += m.tp;
        auto ratio = [](std::uint64_t a, std::uint64_t b, bool& undefined) {
            undefined = b == 0;
            return undefined ? 0.0 : double(a) / double(b);
        };
        m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
        m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
        m.f1_undefined = m.precision + m.recall == 0.0;
        m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
        m.accuracy = r.total ? double(m.tp + m.tn) / double(r.total) : 0.0;
        r.per_class.push_back(m);
    }
    r.accuracy = r.total ? double(trace) / double(r.total) : 0.0;
    for (const auto& m : r.per_class) {
        r.macro.precision += m.precision / double(k);
        r.macro.recall += m.recall / double(k);
        r.macro.f1 += m.f1 / double(k);
        if (r.total) {
            const double w = double(m.support) / double(r.total);
            r.weighted.precision += w * m.precision;
            r.weighted.recall += w * m.recall;
            r.weighted.f1 += w * m.f1;
        }
    }
    return r;
}

inline std::string class_name(std::span<const std::string> names, std::size_t j) {
    return j < names.size() ? names[j] : std::to_string(j);
}

/// Per-class rows, then macro and weighted aggregate rows, then accuracy.
inline void write_metrics_csv(const MetricsReport& r, std::ostream& out, std::span<const std::string> names = {}) {
    using csv_detail::format_double;
    out << "class,precision,recall,f1,accuracy,support\n";
    for (std::size_t j = 0; j < r.per_class.size(); ++j) {
        const auto& m = r.per_class[j];
        out << class_name(names, j) << ',' << format_double(m.precision) << ',' << format_double(m.recall) << ','
            << format_double(m.f1) << ',' << format_double(m.accuracy) << ',' << m.support << '\n';
    }
    out << "macro_avg," << format_double(r.macro.precision) << ',' << format_double(r.macro.recall) << ','
        << format_double(r.macro.f1) << ",," << r.total << '\n';
    out << "weighted_avg," << format_double(r.weighted.precision) << ',' << format_double(r.weighted.recall) << ','
        << format_double(r.weighted.f1) << ",," << r.total << '\n';
    out << "overall_accuracy,,,," << format_double(r.accuracy) << ',' << r.total << '\n';
}

inline nlohmann::json to_json(const MetricsReport& r, std::span<const std::string> names = {}) {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t j = 0; j < r.per_class.size(); ++j) {
        const auto& m = r.per_class[j];
        classes.push_back({{"class", class_name(names, j)},
                           {"tp", m.tp},
                           {"fp", m.fp},
                           {"fn", m.fn},
                           {"tn", m.tn},
                           {"support", m.support},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1},
                           {"accuracy", m.accuracy},
                           {"precision_undefined", m.precision_undefined},
                           {"recall_undefined", m.recall_undefined},
                           {"f1_undefined", m.f1_undefined}});
    }
    auto agg = [](const Aggregate& a) {
        return nlohmann::json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
    };
    return {{"format", "ssltraffic-metrics"}, {"accuracy", r.accuracy}, {"total", r.total},
            {"macro", agg(r.macro)},          {"weighted", agg(r.weighted)}, {"classes", classes}};
}

/// Header row of predicted classes, one row per true class.
inline void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out, std::span<const std::string> names = {}) {
    out << "true\\pred";
    for (std::size_t j = 0; j < cm.classes; ++j) out << ',' << class_name(names, j);
    out << '\n';
    for (std::size_t t = 0; t < cm.classes; ++t) {
        out << class_name(names, t);
        for (std::size_t p = 0; p < cm.classes; ++p) out << ',' << cm(t, p);
        out << '\n';
    }
}

/// gnuplot data: "class precision recall f1" per line, for grouped bars.
inline void write_metrics_gnuplot(const MetricsReport& r, std::ostream& out, std::span<const std::string> names = {}) {
    out << "# class precision recall f1\n";
    for (std::size_t j = 0; j < r.per_class.size(); ++j)
        out << '"' << class_name(names, j) << "\" " << r.per_class[j].precision << ' ' << r.per_class[j].recall << ' '
            << r.per_class[j].f1 << '\n';
}

/// gnuplot data: one indexed block per class with "bin_centre count" lines,
/// plus the class threshold and mean as comments.
inline void write_histogram_gnuplot(const std::vector<std::vector<std::size_t>>& hist,
                                    std::span<const double> thresholds, std::span<const double> means,
                                    std::ostream& out) {
    for (std::size_t j = 0; j < hist.size(); ++j) {
        out << "# class " << j << " threshold " << thresholds[j] << " mean " << means[j] << '\n';
        const double width = 1.0 / double(hist[j].size());
        for (std::size_t b = 0; b < hist[j].size(); ++b) out << (double(b) + 0.5) * width << ' ' << hist[j][b] << '\n';
        out << "\n\n";
    }
}

}  // namespace ssltraffic::eval
