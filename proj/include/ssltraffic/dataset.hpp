#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ssltraffic/errors.hpp"
#include "ssltraffic/nn/matrix.hpp"

namespace ssltraffic {

enum class FeatureKind { continuous, categorical };

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::vector<std::string> vocabulary;  // categorical only

    friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Ordered feature columns. Categorical cells hold vocabulary indices.
struct Schema {
    std::vector<FeatureSpec> features;

    std::size_t width() const noexcept { return features.size(); }

    std::vector<std::size_t> continuous_columns() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i].kind == FeatureKind::continuous) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> categorical_columns() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i].kind == FeatureKind::categorical) out.push_back(i);
        return out;
    }
    std::size_t continuous_width() const { return continuous_columns().size(); }

    /// Width of the model input: continuous columns then one one-hot block per
    /// categorical column, both in schema order.
    std::size_t encoded_width() const {
        std::size_t w = 0;
        for (const auto& f : features) w += f.kind == FeatureKind::continuous ? 1 : f.vocabulary.size();
        return w;
    }

    std::optional<std::size_t> find(std::string_view name) const {
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i].name == name) return i;
        return std::nullopt;
    }

    /// Position of `name` inside the continuous slice.
    std::size_t continuous_index(std::string_view name) const {
        std::size_t k = 0;
        for (const auto& f : features) {
            if (f.kind != FeatureKind::continuous) continue;
            if (f.name == name) return k;
            ++k;
        }
        throw ConfigError("'" + std::string(name) + "' is not a continuous feature of the schema");
    }

    void validate() const {
        std::unordered_set<std::string> seen;
        for (const auto& f : features) {
            if (f.name.empty()) throw ConfigError("schema: empty feature name");
            if (f.name == "label" || f.name == "pseudo_label" || f.name == "weight")
                throw ConfigError("schema: '" + f.name + "' is a reserved column name");
            if (!seen.insert(f.name).second)
                throw ConfigError("schema: feature name '" + f.name + "' appears twice");
            if (f.kind == FeatureKind::categorical && f.vocabulary.empty())
                throw ConfigError("schema: categorical feature '" + f.name + "' has no vocabulary");
        }
    }

    friend bool operator==(const Schema&, const Schema&) = default;
};

/// Per-continuous-column mean and std (floored), in continuous-slice order.
struct Standardization {
    static constexpr double kStdFloor = 1e-9;
    std::vector<double> mean;
    std::vector<double> stddev;

    double to_raw(std::size_t k, double z) const { return mean[k] + stddev[k] * z; }
    double to_standard(std::size_t k, double raw) const { return (raw - mean[k]) / stddev[k]; }

    friend bool operator==(const Standardization&, const Standardization&) = default;
};

struct Dataset {
    Schema schema;
    nn::Matrix features;
    std::optional<std::vector<int>> labels;
    std::optional<std::vector<int>> pseudo_labels;
    std::optional<std::vector<double>> weights;
    /// Present once continuous columns hold standardized values.
    std::optional<Standardization> standardization;

    std::size_t rows() const noexcept { return features.rows(); }

    /// Rows `idx` with all per-row columns.
    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out;
        out.schema = schema;
        out.features = features.gather_rows(idx);
        auto pick_i = [&](const std::optional<std::vector<int>>& v) -> std::optional<std::vector<int>> {
            if (!v) return std::nullopt;
            std::vector<int> o;
            for (auto i : idx) o.push_back((*v)[i]);
            return o;
        };
        out.labels = pick_i(labels);
        out.pseudo_labels = pick_i(pseudo_labels);
        if (weights) {
            std::vector<double> o;
            for (auto i : idx) o.push_back((*weights)[i]);
            out.weights = std::move(o);
        }
        out.standardization = standardization;
        return out;
    }

    void validate() const {
        schema.validate();
        if (features.cols() != schema.width())
            throw DimensionError("dataset: feature matrix width != schema width");
        for (std::size_t j = 0; j < schema.width(); ++j) {
            const auto& f = schema.features[j];
            if (f.kind != FeatureKind::categorical) continue;
            for (std::size_t r = 0; r < rows(); ++r) {
                const double v = features(r, j);
                if (v < 0 || v >= static_cast<double>(f.vocabulary.size()) || v != std::floor(v))
                    throw DataError("dataset: row " + std::to_string(r) + " column '" + f.name +
                                    "' is not a vocabulary index");
            }
        }
        auto check_len = [&](std::size_t n, const char* what) {
            if (n != rows()) throw DimensionError(std::string("dataset: ") + what + " length != rows");
        };
        if (labels) check_len(labels->size(), "labels");
        if (pseudo_labels) check_len(pseudo_labels->size(), "pseudo_labels");
        if (weights) {
            check_len(weights->size(), "weights");
            for (double w : *weights)
                if (!(w > 0.0 && w <= 1.0)) throw DataError("dataset: weight outside (0,1]");
        }
    }
};

/// Population mean/std of each continuous column; std floored at 1e-9.
inline Standardization fit_standardization(const Dataset& ds) {
    Standardization st;
    const auto cols = ds.schema.continuous_columns();
    const double n = static_cast<double>(std::max<std::size_t>(ds.rows(), 1));
    for (auto j : cols) {
        double mean = 0.0;
        for (std::size_t r = 0; r < ds.rows(); ++r) mean += ds.features(r, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < ds.rows(); ++r) {
            const double d = ds.features(r, j) - mean;
            var += d * d;
        }
        st.mean.push_back(mean);
        st.stddev.push_back(std::max(std::sqrt(var / n), Standardization::kStdFloor));
    }
    return st;
}

/// Transforms continuous columns of a raw dataset with `st`.
inline Dataset apply_standardization(Dataset ds, const Standardization& st) {
    if (ds.standardization) throw DataError("dataset is already standardized");
    const auto cols = ds.schema.continuous_columns();
    if (st.mean.size() != cols.size()) throw DimensionError("standardization width mismatch");
    for (std::size_t k = 0; k < cols.size(); ++k)
        for (std::size_t r = 0; r < ds.rows(); ++r)
            ds.features(r, cols[k]) = st.to_standard(k, ds.features(r, cols[k]));
    ds.standardization = st;
    return ds;
}

inline Dataset standardize(Dataset ds) {
    const auto st = fit_standardization(ds);
    return apply_standardization(std::move(ds), st);
}

/// Inverse of standardize.
inline Dataset destandardize(Dataset ds) {
    if (!ds.standardization) return ds;
    const auto cols = ds.schema.continuous_columns();
    for (std::size_t k = 0; k < cols.size(); ++k)
        for (std::size_t r = 0; r < ds.rows(); ++r)
            ds.features(r, cols[k]) = ds.standardization->to_raw(k, ds.features(r, cols[k]));
    ds.standardization.reset();
    return ds;
}

/// Continuous slice as its own matrix.
inline nn::Matrix continuous_matrix(const Dataset& ds) {
    const auto cols = ds.schema.continuous_columns();
    nn::Matrix out(ds.rows(), cols.size());
    for (std::size_t r = 0; r < ds.rows(); ++r)
        for (std::size_t k = 0; k < cols.size(); ++k) out(r, k) = ds.features(r, cols[k]);
    return out;
}

/// One feature row to model input (continuous then one-hot blocks).
inline void encode_row(const Schema& schema, std::span<const double> row, std::span<double> out) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < schema.width(); ++j)
        if (schema.features[j].kind == FeatureKind::continuous) out[pos++] = row[j];
    for (std::size_t j = 0; j < schema.width(); ++j) {
        const auto& f = schema.features[j];
        if (f.kind != FeatureKind::categorical) continue;
        for (std::size_t v = 0; v < f.vocabulary.size(); ++v) out[pos + v] = 0.0;
        out[pos + static_cast<std::size_t>(row[j])] = 1.0;
        pos += f.vocabulary.size();
    }
}

inline nn::Matrix encode_rows(const Schema& schema, const nn::Matrix& rows) {
    nn::Matrix out(rows.rows(), schema.encoded_width());
    for (std::size_t r = 0; r < rows.rows(); ++r) encode_row(schema, rows.row(r), out.row(r));
    return out;
}

inline nn::Matrix encode_inputs(const Dataset& ds) { return encode_rows(ds.schema, ds.features); }

/// Number of classes implied by the labels (max + 1).
inline std::size_t count_classes(std::span<const int> labels) {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return static_cast<std::size_t>(mx + 1);
}

// ---------------------------------------------------------------------------
// CSV

namespace csv_detail {
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, std::size_t line_no, std::string_view column) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                        "': cannot parse number '" + std::string(s) + "'");
    return v;
}

inline int parse_int(std::string_view s, std::size_t line_no, std::string_view column) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                        "': cannot parse integer '" + std::string(s) + "'");
    return v;
}
}  // namespace csv_detail

/// Writes features (raw or standardized, as stored) plus whichever of
/// `label`, `pseudo_label`, `weight` are present. Doubles are written in
/// shortest round-trip form; categorical cells as vocabulary strings.
inline void write_csv(const Dataset& ds, std::ostream& out) {
    for (std::size_t j = 0; j < ds.schema.width(); ++j) out << (j ? "," : "") << ds.schema.features[j].name;
    if (ds.labels) out << ",label";
    if (ds.pseudo_labels) out << ",pseudo_label";
    if (ds.weights) out << ",weight";
    out << '\n';
    for (std::size_t r = 0; r < ds.rows(); ++r) {
        for (std::size_t j = 0; j < ds.schema.width(); ++j) {
            if (j) out << ',';
            const auto& f = ds.schema.features[j];
            if (f.kind == FeatureKind::categorical)
                out << f.vocabulary.at(static_cast<std::size_t>(ds.features(r, j)));
            else
                out << csv_detail::format_double(ds.features(r, j));
        }
        if (ds.labels) out << ',' << (*ds.labels)[r];
        if (ds.pseudo_labels) out << ',' << (*ds.pseudo_labels)[r];
        if (ds.weights) out << ',' << csv_detail::format_double((*ds.weights)[r]);
        out << '\n';
    }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_csv(ds, out);
}

/// Parses a dataset CSV. The header must start with the schema's feature
/// names in order; `label`, `pseudo_label`, `weight` may follow in any order.
inline Dataset read_csv(std::istream& in, const Schema& schema) {
    schema.validate();
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV is empty (no header row)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = csv_detail::split(line);
    if (header.size() < schema.width())
        throw DataError("CSV header has " + std::to_string(header.size()) + " columns, schema needs " +
                        std::to_string(schema.width()));
    for (std::size_t j = 0; j < schema.width(); ++j)
        if (header[j] != schema.features[j].name)
            throw DataError("CSV header column " + std::to_string(j + 1) + " is '" + std::string(header[j]) +
                            "', expected '" + schema.features[j].name + "'");
    std::optional<std::size_t> label_col, pseudo_col, weight_col;
    for (std::size_t j = schema.width(); j < header.size(); ++j) {
        if (header[j] == "label") label_col = j;
        else if (header[j] == "pseudo_label") pseudo_col = j;
        else if (header[j] == "weight") weight_col = j;
        else throw DataError("CSV header: unexpected column '" + std::string(header[j]) + "'");
    }

    Dataset ds;
    ds.schema = schema;
    std::vector<double> values;
    std::vector<int> labels, pseudo;
    std::vector<double> weights;
    std::size_t line_no = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = csv_detail::split(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        for (std::size_t j = 0; j < schema.width(); ++j) {
            const auto& f = schema.features[j];
            if (f.kind == FeatureKind::categorical) {
                const auto it = std::find(f.vocabulary.begin(), f.vocabulary.end(), cells[j]);
                if (it == f.vocabulary.end())
                    throw DataError("line " + std::to_string(line_no) + ": unknown category '" +
                                    std::string(cells[j]) + "' for column '" + f.name + "'");
                values.push_back(static_cast<double>(it - f.vocabulary.begin()));
            } else {
                values.push_back(csv_detail::parse_double(cells[j], line_no, f.name));
            }
        }
        if (label_col) labels.push_back(csv_detail::parse_int(cells[*label_col], line_no, "label"));
        if (pseudo_col) pseudo.push_back(csv_detail::parse_int(cells[*pseudo_col], line_no, "pseudo_label"));
        if (weight_col) weights.push_back(csv_detail::parse_double(cells[*weight_col], line_no, "weight"));
        ++rows;
    }
    ds.features = nn::Matrix(rows, schema.width(), std::move(values));
    if (label_col) ds.labels = std::move(labels);
    if (pseudo_col) ds.pseudo_labels = std::move(pseudo);
    if (weight_col) ds.weights = std::move(weights);
    ds.validate();
    return ds;
}

inline Dataset load_csv(const std::string& path, const Schema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return read_csv(in, schema);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace ssltraffic
