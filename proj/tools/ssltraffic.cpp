// ssltraffic command-line front end.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "ssltraffic/pipeline/stages.hpp"

using namespace ssltraffic;
using namespace ssltraffic::pipeline;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Pulls `--section.key value` / `--section.key=value` out of argv; CLI11
// sees the rest.
Overrides take_overrides(std::vector<std::string>& args) {
    Overrides out;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const auto& a = args[i];
        const bool dotted = a.rfind("--", 0) == 0 && a.substr(2, a.find('=') - 2).find('.') != std::string::npos;
        if (!dotted) {
            rest.push_back(a);
            continue;
        }
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else {
            if (i + 1 >= args.size()) throw ConfigError("override '" + a + "' needs a value");
            out.emplace_back(a.substr(2), args[++i]);
        }
    }
    args = std::move(rest);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    Overrides overrides;
    try {
        overrides = take_overrides(args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    }

    CLI::App app{"Semi-supervised traffic classification with confident learning", "ssltraffic"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path, out_dir;
    long seed = -1, threads = -1;
    app.add_option("-c,--config", config_path, std::string("config file (default: $") + kConfigEnv + ")");
    app.add_option("-o,--out", out_dir, "artifact directory (default: config output_dir)");
    app.add_option("--seed", seed, "global seed");
    app.add_option("--threads", threads, "worker thread cap");
    app.footer("Any config key can be overridden as --section.key VALUE, e.g. --cl.q 0.75");

    std::vector<std::string> pcaps;
    auto* extract = app.add_subcommand("extract", "pcap files -> standardized flow dataset");
    extract->add_option("pcaps", pcaps, "capture files, optionally FILE=LABEL")->required();
    auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset and split it");
    auto* split = app.add_subcommand("split", "split a labeled dataset into labeled/unlabeled/test sets");
    auto* ae = app.add_subcommand("pretrain-ae", "pre-train and fine-tune the autoencoder branch");
    auto* tabcl = app.add_subcommand("pretrain-tabcl", "pre-train and fine-tune the contrastive branch");
    auto* pl = app.add_subcommand("pseudo-label", "pseudo-label the unlabeled set with each trained branch");
    auto* fuse = app.add_subcommand("fuse", "fuse the two branches' pseudo-labels");
    auto* clw = app.add_subcommand("cl-weights", "confident-learning sample weights");
    std::string weights;
    auto* tf = app.add_subcommand("train-final", "train the final classifier");
    tf->add_option("--weights", weights, "cl or none")->check(CLI::IsMember({"cl", "none"}));
    std::string pred, truth;
    auto* ev = app.add_subcommand("evaluate", "evaluate the final model, or a predictions CSV against a truth CSV");
    ev->add_option("--pred", pred, "predictions CSV (pseudo_label or label column)");
    ev->add_option("--truth", truth, "ground-truth CSV (label column)");
    auto* show = app.add_subcommand("show-config", "print the resolved configuration as JSON");
    auto* pipe = app.add_subcommand("pipeline", "run every stage in order");
    std::vector<std::string> pipe_inputs;
    pipe->add_option("pcaps", pipe_inputs, "capture files FILE=LABEL (default: synthetic data)");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (seed >= 0) overrides.emplace_back("seed", std::to_string(seed));
        if (threads >= 0) overrides.emplace_back("threads", std::to_string(threads));
        if (!out_dir.empty()) overrides.emplace_back("output_dir", json(out_dir).dump());
        if (!weights.empty()) overrides.emplace_back("final.weights", weights);
        if (!pipe_inputs.empty()) overrides.emplace_back("inputs", json(pipe_inputs).dump());
        Context ctx{load_config(config_path, overrides), {}, &std::cerr};
        if (*show) {
            std::cout << to_json(ctx.cfg).dump(2) << '\n';
            return 0;
        }
        ctx.dir = ctx.cfg.output_dir;
        std::filesystem::create_directories(ctx.dir);

        if (*extract) {
            const auto ds = stage_extract(ctx, pcaps);
            if (ds.labels && ds.rows()) stage_split(ctx);
        } else if (*synth) {
            stage_synth(ctx);
            stage_split(ctx);
        } else if (*split) {
            stage_split(ctx);
        } else if (*ae) {
            stage_pretrain_ae(ctx);
        } else if (*tabcl) {
            stage_pretrain_tabcl(ctx);
        } else if (*pl) {
            stage_pseudo_label(ctx);
        } else if (*fuse) {
            stage_fuse(ctx);
        } else if (*clw) {
            stage_cl(ctx);
        } else if (*tf) {
            stage_train_final(ctx);
        } else if (*ev) {
            if (pred.empty() != truth.empty()) throw ConfigError("evaluate: give both --pred and --truth, or neither");
            if (pred.empty()) {
                stage_evaluate(ctx);
            } else {
                const auto r = evaluate_files(ctx, load_info(ctx), pred, truth, true);
                ctx.info("evaluate: accuracy " + csv_detail::format_double(r.accuracy) + ", macro F1 " +
                         csv_detail::format_double(r.macro.f1));
            }
        } else if (*pipe) {
            run_pipeline(ctx);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
