#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ssltraffic/nn/mlp.hpp"

namespace ssltraffic::nn {

inline constexpr const char* kCheckpointFormat = "ssltraffic-mlp";

/// JSON document for a model. Doubles are written in shortest round-trip
/// form, so save -> load is bitwise exact.
inline nlohmann::json to_json(const MlpModel& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : model.layers) {
        layers.push_back({{"in", l.in_width()},
                          {"out", l.out_width()},
                          {"activation", to_string(l.activation)},
                          {"dropout", l.dropout},
                          {"trainable", l.trainable},
                          {"weight", l.weight.data()},
                          {"bias", l.bias}});
    }
    return {{"format", kCheckpointFormat}, {"version", 1}, {"layers", layers}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != kCheckpointFormat)
            throw DataError("checkpoint: unexpected format tag");
        MlpModel m;
        for (const auto& jl : j.at("layers")) {
            const auto in = jl.at("in").get<std::size_t>();
            const auto out = jl.at("out").get<std::size_t>();
            Layer l;
            l.weight = Matrix(in, out, jl.at("weight").get<std::vector<double>>());
            l.bias = jl.at("bias").get<std::vector<double>>();
            l.activation = activation_from_string(jl.at("activation").get<std::string>());
            l.dropout = jl.value("dropout", 0.0);
            l.trainable = jl.value("trainable", true);
            m.layers.push_back(std::move(l));
        }
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(1) << '\n';
}

inline void save_checkpoint(const MlpModel& model, const std::string& path) {
    write_json_file(path, to_json(model));
}

inline MlpModel load_checkpoint(const std::string& path) { return mlp_from_json(read_json_file(path)); }

}  // namespace ssltraffic::nn
