#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "ssltraffic/constraints.hpp"
#include "ssltraffic/dataset.hpp"
#include "ssltraffic/flow/aggregate.hpp"

namespace ssltraffic::flow {

/// Durations are floored to one microsecond before any ratio is taken.
inline constexpr double kTimeTick = 1e-6;

/// Every feature featurize() knows how to compute, in catalogue order.
inline const std::vector<std::string>& feature_catalogue() {
    static const std::vector<std::string> names{
        "total_packets",      "total_bytes",       "duration",          "mean_packet_length",
        "min_packet_length",  "max_packet_length", "std_packet_length", "mean_iat",
        "min_iat",            "max_iat",           "std_iat",           "throughput",
        "packet_rate",        "up_bytes",          "down_bytes",        "up_packets",
        "down_packets",       "up_down_byte_ratio", "burst_count",      "mean_burst_length",
        "protocol",           "direction"};
    return names;
}

/// The default 21-column schema: the catalogue minus `down_packets`
/// (which always equals total_packets - up_packets).
inline std::vector<std::string> default_feature_columns() {
    std::vector<std::string> cols;
    for (const auto& n : feature_catalogue())
        if (n != "down_packets") cols.push_back(n);
    return cols;
}

inline FeatureSpec feature_spec(const std::string& name) {
    if (name == "protocol") return {name, FeatureKind::categorical, {"TCP", "UDP"}};
    if (name == "direction") return {name, FeatureKind::categorical, {"unidirectional", "bidirectional"}};
    const auto& cat = feature_catalogue();
    if (std::find(cat.begin(), cat.end(), name) == cat.end())
        throw ConfigError("unknown flow feature '" + name + "'");
    return {name, FeatureKind::continuous, {}};
}

inline Schema make_flow_schema(const std::vector<std::string>& columns) {
    Schema s;
    for (const auto& c : columns) s.features.push_back(feature_spec(c));
    s.validate();
    return s;
}

inline Schema default_flow_schema() { return make_flow_schema(default_feature_columns()); }

/// The identities the flow features satisfy by construction, restricted to
/// those whose features all appear in `schema`:
///   mean_packet_length = total_bytes / total_packets
///   throughput         = total_bytes / duration
///   mean_iat           = duration / max(total_packets - 1, 1)
inline ConstraintSet default_flow_constraints(const Schema& schema, double phi = 1.0) {
    struct Rule {
        const char *a, *b, *c;
        double offset, floor;
    };
    const Rule rules[] = {{"mean_packet_length", "total_bytes", "total_packets", 0.0, 0.0},
                          {"throughput", "total_bytes", "duration", 0.0, 0.0},
                          {"mean_iat", "duration", "total_packets", -1.0, 1.0}};
    auto has_cont = [&](const char* n) {
        const auto i = schema.find(n);
        return i && schema.features[*i].kind == FeatureKind::continuous;
    };
    std::vector<Constraint> out;
    for (const auto& r : rules) {
        if (!has_cont(r.a) || !has_cont(r.b) || !has_cont(r.c)) continue;
        out.push_back({ConstraintKind::ratio, schema.continuous_index(r.a), schema.continuous_index(r.b),
                       schema.continuous_index(r.c), phi, r.offset, r.floor});
    }
    return ConstraintSet(std::move(out), schema.continuous_width());
}

/// Value of catalogue feature `name` for flow `f`.
inline double flow_feature(const FlowRecord& f, const std::string& name) {
    const double packets = static_cast<double>(f.packets());
    const double bytes = static_cast<double>(f.bytes());
    const double duration = std::max(f.last_ts - f.first_ts, kTimeTick);
    const bool has_iat = f.iat.count > 0;
    if (name == "total_packets") return packets;
    if (name == "total_bytes") return bytes;
    if (name == "duration") return duration;
    if (name == "mean_packet_length") return bytes / packets;
    if (name == "min_packet_length") return f.packet_length.min;
    if (name == "max_packet_length") return f.packet_length.max;
    if (name == "std_packet_length") return f.packet_length.stddev();
    if (name == "mean_iat") return duration / std::max(packets - 1.0, 1.0);
    if (name == "min_iat") return has_iat ? f.iat.min : 0.0;
    if (name == "max_iat") return has_iat ? f.iat.max : 0.0;
    if (name == "std_iat") return f.iat.stddev();
    if (name == "throughput") return bytes / duration;
    if (name == "packet_rate") return packets / duration;
    if (name == "up_bytes") return static_cast<double>(f.up_bytes);
    if (name == "down_bytes") return static_cast<double>(f.down_bytes);
    if (name == "up_packets") return static_cast<double>(f.up_packets);
    if (name == "down_packets") return static_cast<double>(f.down_packets);
    if (name == "up_down_byte_ratio")
        return static_cast<double>(f.up_bytes) / std::max(static_cast<double>(f.down_bytes), 1.0);
    if (name == "burst_count") return static_cast<double>(f.burst_count);
    if (name == "mean_burst_length") return packets / static_cast<double>(f.burst_count);
    if (name == "protocol") return f.key.protocol == Protocol::tcp ? 0.0 : 1.0;
    if (name == "direction") return (f.up_packets > 0 && f.down_packets > 0) ? 1.0 : 0.0;
    throw ConfigError("unknown flow feature '" + name + "'");
}

/// Raw (unstandardized) feature table, one row per flow.
inline Dataset featurize(const std::vector<FlowRecord>& flows, const Schema& schema) {
    schema.validate();
    Dataset ds;
    ds.schema = schema;
    ds.features = nn::Matrix(flows.size(), schema.width());
    for (std::size_t r = 0; r < flows.size(); ++r)
        for (std::size_t j = 0; j < schema.width(); ++j)
            ds.features(r, j) = flow_feature(flows[r], schema.features[j].name);
    return ds;
}

}  // namespace ssltraffic::flow
