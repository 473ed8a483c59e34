#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssltraffic/pipeline/stages.hpp"

using namespace ssltraffic;
using namespace ssltraffic::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("ssltraffic_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

PipelineConfig tiny_config(const fs::path& dir) {
    json j = to_json(PipelineConfig{});
    const std::pair<const char*, const char*> o[] = {
        {"synth.samples", "400"},       {"synth.classes", "3"},          {"synth.priors", "\"uniform\""},
        {"synth.separation", "3"},      {"synth.labeled_fraction", "0.2"}, {"ae.hidden", "[16]"},
        {"ae.latent", "8"},             {"ae.head_hidden", "[8]"},       {"ae.pretrain_epochs", "3"},
        {"ae.finetune_epochs", "5"},    {"tabcl.hidden", "[16]"},        {"tabcl.latent", "8"},
        {"tabcl.projection_dim", "8"},  {"tabcl.head_hidden", "[8]"},    {"tabcl.epochs", "3"},
        {"tabcl.probe_epochs", "5"},    {"tabcl.finetune_epochs", "5"},  {"cl.epochs", "5"},
        {"final.hidden", "[16]"},       {"final.epochs", "5"},           {"final.learning_rate", "1e-3"}};
    for (const auto& [k, v] : o) apply_override(j, k, v);
    apply_override(j, "output_dir", json(dir.string()).dump());
    return from_json(j);
}

}  // namespace

TEST_CASE("config defaults are the evaluation hyperparameters", "[pipeline][config]") {
    const PipelineConfig c = load_config("");
    CHECK(c.ae.hidden == std::vector<std::size_t>{256, 128, 64});
    CHECK(c.ae.latent == 128);
    CHECK(c.ae.learning_rate == 5e-4);
    CHECK(c.tabcl.replacement_rate == 0.15);
    CHECK(c.tabcl.tau_cont == 0.5);
    CHECK(c.tabcl.tau_cat == 0.2);
    CHECK(c.tabcl.lambda == 0.5);
    CHECK(c.cl.q == 0.7);
    CHECK(c.cl.w_min == 0.2);
    CHECK(c.cl.gamma == 4.0);
    CHECK(c.final.sce.alpha == 0.3);
    CHECK(c.final.sce.beta == 2.0);
    CHECK(c.final.sce.hidden == std::vector<std::size_t>{512, 256, 128});
    CHECK(c.features.columns.size() == 21);
    CHECK(from_json(to_json(c)).cl.q == c.cl.q);
}

TEST_CASE("dot-path overrides and strict keys", "[pipeline][config]") {
    json j = to_json(PipelineConfig{});
    apply_override(j, "cl.q", "0.75");
    apply_override(j, "tabcl.r", "0.1");
    apply_override(j, "ae.latent", "64");
    apply_override(j, "cl.gamma", "6");
    apply_override(j, "final.weights", "none");
    const auto c = from_json(j);
    CHECK(c.cl.q == 0.75);
    CHECK(c.tabcl.replacement_rate == 0.1);
    CHECK(c.ae.latent == 64);
    CHECK(c.cl.gamma == 6.0);
    CHECK(c.final.weights == "none");
    CHECK_THROWS_AS(apply_override(j, "cl.qq", "1"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "cl", "1"), ConfigError);
    apply_override(j, "cl.q", "high");
    CHECK_THROWS_AS(from_json(j), ConfigError);

    json base = to_json(PipelineConfig{});
    CHECK_THROWS_AS(detail::merge_strict(base, json{{"ae", {{"latnt", 3}}}}, ""), ConfigError);
    CHECK_THROWS_AS(detail::merge_strict(base, json{{"bogus", 1}}, ""), ConfigError);
    detail::merge_strict(base, json{{"constraints", {{"rules", json::array()}}}}, "");
    CHECK(from_json(base).constraints.rules->empty());

    json bad = to_json(PipelineConfig{});
    apply_override(bad, "cl.w_min", "1.5");
    CHECK_THROWS_AS(from_json(bad), ConfigError);
}

TEST_CASE("config file and environment variable", "[pipeline][config]") {
    const auto dir = scratch("config");
    const auto file = dir / "c.json";
    std::ofstream(file) << R"({"seed": 42, "cl": {"q": 0.8}})";
    const auto c = load_config(file.string(), {{"cl.w_min", "0.3"}});
    CHECK(c.seed == 42);
    CHECK(c.cl.q == 0.8);
    CHECK(c.cl.w_min == 0.3);
    ::setenv(kConfigEnv, file.string().c_str(), 1);
    CHECK(load_config("").seed == 42);
    ::unsetenv(kConfigEnv);
    CHECK_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);
    std::ofstream(dir / "broken.json") << "{";
    CHECK_THROWS_AS(load_config((dir / "broken.json").string()), ConfigError);
}

TEST_CASE("named constraint rules resolve against the schema", "[pipeline][config]") {
    const Schema schema = flow::default_flow_schema();
    ConstraintsSection sec;
    CHECK(build_constraints(sec, schema).size() == 3);
    sec.rules = std::vector<ConstraintRule>{{"ratio", "mean_packet_length", "total_bytes", "total_packets", 0.5, 0, 0}};
    const auto set = build_constraints(sec, schema);
    REQUIRE(set.size() == 1);
    CHECK(set.constraints()[0].a == schema.continuous_index("mean_packet_length"));
    CHECK(set.constraints()[0].phi == 0.5);
    sec.rules = std::vector<ConstraintRule>{{"ratio", "nope", "total_bytes", "total_packets", 1, 0, 0}};
    CHECK_THROWS_AS(build_constraints(sec, schema), ConfigError);
}

TEST_CASE("schema file round-trips", "[pipeline]") {
    DatasetInfo info{flow::default_flow_schema(), Standardization{{1.5, 2.0}, {0.1, 3.0}}, 4};
    const auto back = schema_from_json(json::parse(schema_to_json(info).dump()));
    CHECK(back.schema == info.schema);
    CHECK(back.standardization == info.standardization);
    CHECK(back.classes == 4);
    CHECK_THROWS_AS(schema_from_json(json{{"format", "other"}}), DataError);
}

TEST_CASE("pipeline writes every artifact and reruns identically", "[pipeline][slow]") {
    const auto d1 = scratch("run1"), d2 = scratch("run2");
    Context c1{tiny_config(d1), d1, nullptr}, c2{tiny_config(d2), d2, nullptr};
    const auto r = run_pipeline(c1);
    run_pipeline(c2);
    CHECK(r.total == 80);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(d1)) {
        ++files;
        CHECK(slurp(e.path()) == slurp(d2 / e.path().filename()));
    }
    CHECK(files == 28);
    CHECK(slurp(d1 / artifact::final_history).rfind("epoch,loss,train_accuracy\n", 0) == 0);

    // one-branch fusion is refused when the other branch exists only partly
    fs::remove(d1 / artifact::probs_tabcl);
    CHECK_THROWS_AS(stage_fuse(c1), DataError);
    c1.cfg.fusion.branches = "ae";
    CHECK_NOTHROW(stage_fuse(c1));
}

TEST_CASE("extract on an empty capture yields an empty dataset", "[pipeline]") {
    const auto dir = scratch("extract");
    {
        std::ofstream out(dir / "empty.pcap", std::ios::binary);
        const std::uint32_t hdr[6] = {0xa1b2c3d4, 0x00040002, 0, 0, 65535, 1};
        out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    }
    Context ctx{load_config(""), dir, nullptr};
    const auto ds = stage_extract(ctx, {(dir / "empty.pcap").string()});
    CHECK(ds.rows() == 0);
    CHECK(ds.schema.width() == 21);
    CHECK(fs::exists(dir / artifact::dataset));
    CHECK_THROWS_AS(stage_extract(ctx, {(dir / "missing.pcap").string()}), DataError);
    CHECK_THROWS_AS(stage_extract(ctx, {(dir / "empty.pcap=1").string(), (dir / "empty.pcap").string()}),
                    ConfigError);
}
