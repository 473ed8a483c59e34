#pragma once

// Pipeline stages. Each stage reads and writes numbered artifacts inside one
// output directory, so stages can be run one at a time or chained.

#include <filesystem>
#include <functional>
#include <numeric>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ssltraffic/cl/confident_learning.hpp"
#include "ssltraffic/eval/metrics.hpp"
#include "ssltraffic/final_trainer.hpp"
#include "ssltraffic/flow/aggregate.hpp"
#include "ssltraffic/flow/features.hpp"
#include "ssltraffic/flow/pcap.hpp"
#include "ssltraffic/fusion.hpp"
#include "ssltraffic/nn/checkpoint.hpp"
#include "ssltraffic/pipeline/config.hpp"
#include "ssltraffic/ssl/autoencoder.hpp"
#include "ssltraffic/ssl/tabcl.hpp"
#include "ssltraffic/synth/generate.hpp"

namespace ssltraffic::pipeline {

namespace artifact {
inline constexpr const char* config = "00_config.json";
inline constexpr const char* schema = "01_schema.json";
inline constexpr const char* dataset = "01_dataset.csv";
inline constexpr const char* labeled = "01_labeled.csv";
inline constexpr const char* unlabeled = "01_unlabeled.csv";
inline constexpr const char* unlabeled_truth = "01_unlabeled_truth.csv";
inline constexpr const char* test = "01_test.csv";
inline constexpr const char* ae = "02_ae.ckpt";
inline constexpr const char* ae_history = "02_ae_history.csv";
inline constexpr const char* tabcl = "03_tabcl.ckpt";
inline constexpr const char* tabcl_history = "03_tabcl_history.csv";
inline constexpr const char* pseudo_ae = "04_pseudo_ae.csv";
inline constexpr const char* probs_ae = "04_probs_ae.csv";
inline constexpr const char* pseudo_tabcl = "04_pseudo_tabcl.csv";
inline constexpr const char* probs_tabcl = "04_probs_tabcl.csv";
inline constexpr const char* fused = "05_fused.csv";
inline constexpr const char* pseudo = "05_pseudo.csv";
inline constexpr const char* cl_report = "06_cl_report.json";
inline constexpr const char* weighted = "06_weighted.csv";
inline constexpr const char* final_model = "07_final.ckpt";
inline constexpr const char* final_history = "07_final_history.csv";
inline constexpr const char* predictions = "08_predictions.csv";
inline constexpr const char* metrics_csv = "08_metrics.csv";
inline constexpr const char* metrics_json = "08_metrics.json";
inline constexpr const char* confusion = "08_confusion.csv";
inline constexpr const char* f1_dat = "08_class_metrics.dat";
inline constexpr const char* cl_hist_dat = "08_cl_histogram.dat";
inline constexpr const char* pseudo_metrics = "08_pseudo_label_metrics.json";
}  // namespace artifact

/// Stage environment: resolved config, workspace directory, log sink.
struct Context {
    PipelineConfig cfg;
    std::filesystem::path dir;
    std::ostream* log = &std::cerr;

    std::string path(const char* name) const { return (dir / name).string(); }
    bool has(const char* name) const { return std::filesystem::exists(dir / name); }
    void require(const char* name, const char* hint) const {
        if (!has(name))
            throw DataError("missing artifact '" + path(name) + "'" + (hint && *hint ? std::string("; ") + hint : ""));
    }
    void info(const std::string& msg) const {
        if (log) *log << "[ssltraffic] " << msg << '\n';
    }
    void warn(const std::string& msg) const {
        if (log) *log << "[ssltraffic] warning: " << msg << '\n';
    }
};

/// Schema, standardization and class count shared by every stage.
struct DatasetInfo {
    Schema schema;
    std::optional<Standardization> standardization;
    std::size_t classes = 0;
};

inline json schema_to_json(const DatasetInfo& info) {
    json features = json::array();
    for (const auto& f : info.schema.features) {
        json e{{"name", f.name}, {"kind", f.kind == FeatureKind::continuous ? "continuous" : "categorical"}};
        if (f.kind == FeatureKind::categorical) e["vocabulary"] = f.vocabulary;
        features.push_back(e);
    }
    json st = nullptr;
    if (info.standardization) st = {{"mean", info.standardization->mean}, {"stddev", info.standardization->stddev}};
    return {{"format", "ssltraffic-schema"}, {"classes", info.classes}, {"features", features}, {"standardization", st}};
}

inline DatasetInfo schema_from_json(const json& j) {
    try {
        if (j.at("format") != "ssltraffic-schema") throw DataError("not a schema file");
        DatasetInfo info;
        j.at("classes").get_to(info.classes);
        for (const auto& e : j.at("features")) {
            FeatureSpec f;
            e.at("name").get_to(f.name);
            const auto kind = e.at("kind").get<std::string>();
            if (kind == "categorical") {
                f.kind = FeatureKind::categorical;
                e.at("vocabulary").get_to(f.vocabulary);
            } else if (kind != "continuous") {
                throw DataError("unknown feature kind '" + kind + "'");
            }
            info.schema.features.push_back(std::move(f));
        }
        if (!j.at("standardization").is_null()) {
            Standardization st;
            j["standardization"].at("mean").get_to(st.mean);
            j["standardization"].at("stddev").get_to(st.stddev);
            info.standardization = std::move(st);
        }
        info.schema.validate();
        return info;
    } catch (const json::exception& e) {
        throw DataError(std::string("schema file: ") + e.what());
    }
}

inline DatasetInfo load_info(const Context& ctx) {
    ctx.require(artifact::schema, "run `extract` or `synth` first");
    return schema_from_json(nn::read_json_file(ctx.path(artifact::schema)));
}

inline Dataset load_dataset(const Context& ctx, const DatasetInfo& info, const char* name, const char* hint) {
    ctx.require(name, hint);
    Dataset ds = load_csv(ctx.path(name), info.schema);
    ds.standardization = info.standardization;
    return ds;
}

inline void write_text(const std::string& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    body(out);
}

inline void write_json(const std::string& path, const json& j) {
    write_text(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

/// Identity set for `schema`: the configured rules, or the built-in flow
/// identities whose features are present.
inline ConstraintSet build_constraints(const ConstraintsSection& sec, const Schema& schema) {
    if (!sec.rules) {
        const auto def = flow::default_flow_constraints(schema, sec.phi);
        return ConstraintSet(std::vector<Constraint>(def.constraints().begin(), def.constraints().end()),
                             schema.continuous_width(), sec.delta);
    }
    std::vector<Constraint> out;
    for (const auto& r : *sec.rules) {
        out.push_back({constraint_kind_from_string(r.kind), schema.continuous_index(r.a), schema.continuous_index(r.b),
                       schema.continuous_index(r.c), r.phi, r.offset, r.floor});
    }
    return ConstraintSet(std::move(out), schema.continuous_width(), sec.delta);
}

inline void check_classes(std::span<const int> labels, std::size_t classes, const char* what) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw ConfigError(std::string(what) + ": label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " does not fit " + std::to_string(classes) + " classes");
}

inline void write_probs_csv(const nn::Matrix& p, const std::string& path) {
    write_text(path, [&](std::ostream& out) {
        for (std::size_t j = 0; j < p.cols(); ++j) out << (j ? ",p" : "p") << j;
        out << '\n';
        for (std::size_t r = 0; r < p.rows(); ++r) {
            for (std::size_t j = 0; j < p.cols(); ++j) out << (j ? "," : "") << csv_detail::format_double(p(r, j));
            out << '\n';
        }
    });
}

inline nn::Matrix read_probs_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty probability file");
    const std::size_t k = csv_detail::split(line).size();
    std::vector<double> values;
    std::size_t rows = 0, line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = csv_detail::split(line);
        if (cells.size() != k) throw DataError(path + ": line " + std::to_string(line_no) + " has wrong arity");
        for (const auto& c : cells) values.push_back(csv_detail::parse_double(c, line_no, "p"));
        ++rows;
    }
    return nn::Matrix(rows, k, std::move(values));
}

// ---- stage 1: data -------------------------------------------------------

/// Standardizes `raw`, writes the schema file and the full dataset CSV.
inline Dataset write_prepared(const Context& ctx, Dataset raw, std::size_t classes) {
    Dataset ds = standardize(std::move(raw));
    DatasetInfo info{ds.schema, ds.standardization, classes};
    write_json(ctx.path(artifact::schema), schema_to_json(info));
    save_csv(ds, ctx.path(artifact::dataset));
    return ds;
}

/// Input spec "capture.pcap" or "capture.pcap=LABEL".
struct PcapInput {
    std::string path;
    std::optional<int> label;
};

inline PcapInput parse_input(const std::string& s) {
    const auto eq = s.rfind('=');
    if (eq == std::string::npos) return {s, std::nullopt};
    try {
        return {s.substr(0, eq), std::stoi(s.substr(eq + 1))};
    } catch (const std::exception&) {
        throw ConfigError("input '" + s + "': label after '=' is not an integer");
    }
}

/// parse -> aggregate -> featurize -> standardize. Either every input carries
/// a label or none does.
inline Dataset stage_extract(const Context& ctx, const std::vector<std::string>& inputs) {
    const Schema schema = flow::make_flow_schema(ctx.cfg.features.columns);
    Dataset raw;
    raw.schema = schema;
    raw.features = nn::Matrix(0, schema.width());
    std::vector<int> labels;
    std::size_t labeled_inputs = 0;
    for (const auto& s : inputs) {
        const PcapInput in = parse_input(s);
        flow::PcapParseResult parsed;
        try {
            parsed = flow::parse_pcap_file(in.path);
        } catch (const Error& e) {
            throw DataError(in.path + ": " + e.what());
        }
        const auto flows = flow::aggregate(std::move(parsed.packets), ctx.cfg.features.aggregate);
        ctx.info(in.path + ": " + std::to_string(parsed.stats.accepted) + " packets, " +
                 std::to_string(flows.size()) + " flows");
        const Dataset part = flow::featurize(flows, schema);
        raw.features = nn::vstack(raw.features, part.features);
        if (in.label) {
            ++labeled_inputs;
            labels.insert(labels.end(), part.rows(), *in.label);
        }
    }
    if (labeled_inputs && labeled_inputs != inputs.size())
        throw ConfigError("extract: either every input has a =LABEL suffix or none does");
    std::size_t classes = 0;
    if (labeled_inputs) {
        raw.labels = labels;
        for (int l : labels) {
            if (l < 0) throw ConfigError("extract: labels must be >= 0");
            classes = std::max(classes, static_cast<std::size_t>(l) + 1);
        }
    }
    if (raw.rows() == 0) ctx.warn("no flows extracted; writing an empty dataset");
    return write_prepared(ctx, std::move(raw), classes);
}

inline synth::SynthSpec synth_spec(const PipelineConfig& cfg) {
    const auto& s = cfg.synth;
    std::vector<double> priors;
    if (s.priors.is_string()) {
        if (s.priors == "paper") {
            priors = synth::paper_class_priors();
            if (priors.size() != s.classes)
                throw ConfigError("synth.priors 'paper' needs synth.classes = " + std::to_string(priors.size()));
        } else if (s.priors != "uniform") {
            throw ConfigError("synth.priors must be 'paper', 'uniform' or a list");
        }
    } else {
        try {
            s.priors.get_to(priors);
        } catch (const json::exception&) {
            throw ConfigError("synth.priors must be 'paper', 'uniform' or a list of numbers");
        }
        if (priors.size() != s.classes) throw ConfigError("synth.priors length != synth.classes");
    }
    const auto seed = derive_seed(cfg.seed, 1);
    if (s.kind == "gaussian") return synth::gaussian_spec(s.classes, s.dims, s.separation, priors, s.samples, seed);
    return synth::flow_spec({s.classes, priors, s.samples, s.separation, seed});
}

/// Generated labeled dataset. With a noise rate, `pseudo_label` holds the
/// labels after exact-count flips.
inline Dataset stage_synth(const Context& ctx) {
    const auto spec = synth_spec(ctx.cfg);
    Dataset raw = synth::generate(spec);
    if (ctx.cfg.synth.noise_rate > 0.0)
        raw.pseudo_labels =
            synth::inject_noise(*raw.labels, ctx.cfg.synth.noise_rate, derive_seed(ctx.cfg.seed, 9), spec.num_classes)
                .labels;
    ctx.info("generated " + std::to_string(raw.rows()) + " rows, " + std::to_string(spec.num_classes) + " classes");
    return write_prepared(ctx, std::move(raw), spec.num_classes);
}

/// Test split (eval.test_fraction), then labeled D_s (synth.labeled_fraction
/// of the rest) and unlabeled D_l, all stratified by the true label.
inline void stage_split(const Context& ctx) {
    const DatasetInfo info = load_info(ctx);
    const Dataset ds = load_dataset(ctx, info, artifact::dataset, "");
    if (!ds.labels) throw DataError("split: dataset has no label column; extract with FILE=LABEL inputs");
    check_classes(*ds.labels, info.classes, "split");
    std::vector<std::size_t> train(ds.rows());
    std::iota(train.begin(), train.end(), 0);
    std::vector<std::size_t> test;
    if (ctx.cfg.eval.test_fraction > 0.0) {
        const auto s = synth::stratified_split(*ds.labels, ctx.cfg.eval.test_fraction, derive_seed(ctx.cfg.seed, 10));
        test = s.labeled;
        train = s.unlabeled;
    }
    const Dataset pool = ds.subset(train);
    const auto s = synth::stratified_split(*pool.labels, ctx.cfg.synth.labeled_fraction, derive_seed(ctx.cfg.seed, 11));
    Dataset labeled = pool.subset(s.labeled), unlabeled = pool.subset(s.unlabeled);
    labeled.pseudo_labels.reset();
    unlabeled.pseudo_labels.reset();
    Dataset truth = unlabeled;
    unlabeled.labels.reset();
    Dataset test_ds = ds.subset(test);
    test_ds.pseudo_labels.reset();
    save_csv(labeled, ctx.path(artifact::labeled));
    save_csv(unlabeled, ctx.path(artifact::unlabeled));
    save_csv(truth, ctx.path(artifact::unlabeled_truth));
    save_csv(test_ds, ctx.path(artifact::test));
    ctx.info("split: " + std::to_string(labeled.rows()) + " labeled, " + std::to_string(unlabeled.rows()) +
             " unlabeled, " + std::to_string(test_ds.rows()) + " test");
}

// ---- stages 2-4: SSL branches ----------------------------------------------

struct BranchInputs {
    DatasetInfo info;
    Dataset labeled, unlabeled;
    ConstraintSet constraints;
};

inline BranchInputs load_branch_inputs(const Context& ctx) {
    BranchInputs b{load_info(ctx), {}, {}, {}};
    b.labeled = load_dataset(ctx, b.info, artifact::labeled, "run `split` first");
    b.unlabeled = load_dataset(ctx, b.info, artifact::unlabeled, "run `split` first");
    if (!b.labeled.labels) throw DataError("labeled set has no label column");
    check_classes(*b.labeled.labels, b.info.classes, "labeled set");
    b.constraints = build_constraints(ctx.cfg.constraints, b.info.schema);
    return b;
}

/// Pre-trains on D_l, fine-tunes on D_s, writes the checkpoint and history.
inline void stage_pretrain_ae(const Context& ctx) {
    auto in = load_branch_inputs(ctx);
    ctx.info("ae: pre-training on " + std::to_string(in.unlabeled.rows()) + " rows");
    auto res = ssl::pretrain_ae(in.unlabeled, in.constraints, ctx.cfg.ae);
    ssl::finetune_ae(res.model, in.labeled, in.info.classes, ctx.cfg.ae);
    nn::write_json_file(ctx.path(artifact::ae), ssl::to_json(res.model));
    write_text(ctx.path(artifact::ae_history), [&](std::ostream& o) { ssl::write_ae_history(res.history, o); });
}

inline void stage_pretrain_tabcl(const Context& ctx) {
    auto in = load_branch_inputs(ctx);
    ctx.info("tabcl: pre-training on " + std::to_string(in.unlabeled.rows()) + " rows");
    auto res = ssl::pretrain_tabcl(in.unlabeled, in.labeled, in.constraints, in.info.classes, ctx.cfg.tabcl);
    if (res.view_stats.marginal_fallbacks)
        ctx.warn("tabcl: " + std::to_string(res.view_stats.marginal_fallbacks) +
                 " views fell back to marginal replacement");
    ssl::finetune_tabcl(res.model, in.labeled, in.info.classes, ctx.cfg.tabcl);
    nn::write_json_file(ctx.path(artifact::tabcl), ssl::to_json(res.model));
    write_text(ctx.path(artifact::tabcl_history), [&](std::ostream& o) { ssl::write_tabcl_history(res.history, o); });
}

/// Pseudo-labels D_l with every branch whose checkpoint exists.
inline void stage_pseudo_label(const Context& ctx) {
    const DatasetInfo info = load_info(ctx);
    const Dataset unlabeled = load_dataset(ctx, info, artifact::unlabeled, "run `split` first");
    bool any = false;
    auto emit = [&](const ssl::PseudoLabels& p, const char* csv, const char* probs) {
        if (p.probs.cols() != info.classes)
            throw ConfigError("pseudo-label: model has " + std::to_string(p.probs.cols()) + " classes, dataset " +
                              std::to_string(info.classes));
        Dataset out = unlabeled;
        out.pseudo_labels = p.labels;
        save_csv(out, ctx.path(csv));
        write_probs_csv(p.probs, ctx.path(probs));
        any = true;
    };
    if (ctx.has(artifact::ae))
        emit(ssl::pseudo_label_ae(ssl::ae_from_json(nn::read_json_file(ctx.path(artifact::ae))), unlabeled),
             artifact::pseudo_ae, artifact::probs_ae);
    if (ctx.has(artifact::tabcl))
        emit(ssl::pseudo_label_tabcl(ssl::tabcl_from_json(nn::read_json_file(ctx.path(artifact::tabcl))), unlabeled),
             artifact::pseudo_tabcl, artifact::probs_tabcl);
    if (!any) throw DataError("pseudo-label: no branch checkpoint found; run `pretrain-ae` and/or `pretrain-tabcl`");
}

// ---- stage 5: fusion --------------------------------------------------------

inline void stage_fuse(const Context& ctx) {
    const DatasetInfo info = load_info(ctx);
    Dataset pool = load_dataset(ctx, info, artifact::unlabeled, "run `split` first");
    const auto& mode = ctx.cfg.fusion.branches;
    if (mode != "both") {
        const char* probs = mode == "ae" ? artifact::probs_ae : artifact::probs_tabcl;
        ctx.require(probs, "run `pseudo-label` first");
        const auto b = summarize(read_probs_csv(ctx.path(probs)));
        pool.pseudo_labels = b.labels;
        save_csv(pool, ctx.path(artifact::pseudo));
        ctx.info("fuse: single branch '" + mode + "', pseudo-labels copied");
        return;
    }
    const bool has_ae = ctx.has(artifact::probs_ae), has_tabcl = ctx.has(artifact::probs_tabcl);
    if (has_ae != has_tabcl)
        throw DataError(std::string("fuse: only the ") + (has_ae ? "AE" : "TabCL") +
                        " branch has pseudo-labels; pseudo-label with both branches, or set fusion.branches to '" +
                        (has_ae ? "ae" : "tabcl") + "' to use one branch without fusion");
    ctx.require(artifact::probs_ae, "run `pseudo-label` first");
    const auto a = summarize(read_probs_csv(ctx.path(artifact::probs_ae)));
    const auto b = summarize(read_probs_csv(ctx.path(artifact::probs_tabcl)));
    if (a.labels.size() != pool.rows()) throw DimensionError("fuse: branch row count != unlabeled rows");
    const auto f = fuse(a, b);
    write_text(ctx.path(artifact::fused), [&](std::ostream& o) { write_fusion_csv(a, b, f, o); });
    pool.pseudo_labels = f.labels;
    save_csv(pool, ctx.path(artifact::pseudo));
    ctx.info("fuse: " + std::to_string(f.count(Provenance::agree)) + " of " + std::to_string(pool.rows()) +
             " rows agree");
}

// ---- stage 6: confident learning -------------------------------------------

inline cl::ClReport stage_cl(const Context& ctx) {
    const DatasetInfo info = load_info(ctx);
    Dataset pool = load_dataset(ctx, info, artifact::pseudo, "run `fuse` first");
    if (!pool.pseudo_labels) throw DataError("cl-weights: pseudo-labeled set has no pseudo_label column");
    check_classes(*pool.pseudo_labels, info.classes, "cl-weights");
    auto report = cl::run_cl(pool, info.classes, ctx.cfg.cl);
    for (const auto& w : report.warnings) ctx.warn("cl: " + w);
    pool.weights = report.weights.final;
    save_csv(pool, ctx.path(artifact::weighted));
    write_json(ctx.path(artifact::cl_report), cl::to_json(report));
    return report;
}

// ---- stage 7: final classifier ----------------------------------------------

inline void stage_train_final(const Context& ctx) {
    const DatasetInfo info = load_info(ctx);
    const bool use_cl = ctx.cfg.final.weights == "cl";
    Dataset pool = use_cl ? load_dataset(ctx, info, artifact::weighted, "run `cl-weights` first, or use --weights none")
                          : load_dataset(ctx, info, artifact::pseudo, "run `fuse` first");
    if (!use_cl) pool.weights.reset();
    if (!pool.pseudo_labels) throw DataError("train-final: training set has no pseudo_label column");
    check_classes(*pool.pseudo_labels, info.classes, "train-final");
    std::optional<Dataset> labeled;
    if (ctx.cfg.final.sce.include_labeled) labeled = load_dataset(ctx, info, artifact::labeled, "run `split` first");
    auto res = train_final(pool, info.classes, ctx.cfg.final.sce, labeled ? &*labeled : nullptr);
    for (const auto& w : res.warnings) ctx.warn("train-final: " + w);
    nn::save_checkpoint(res.model, ctx.path(artifact::final_model));
    write_text(ctx.path(artifact::final_history), [&](std::ostream& o) { write_final_history(res.history, o); });
}

// ---- stage 8: evaluation ----------------------------------------------------

/// Metrics of `pred` (pseudo_label column, else label) against `truth`
/// (label column); writes the CSV/JSON/confusion/gnuplot reports with the
/// given file names.
inline eval::MetricsReport evaluate_files(const Context& ctx, const DatasetInfo& info, const std::string& pred_path,
                                          const std::string& truth_path, bool full_report) {
    const Dataset pred = load_csv(pred_path, info.schema);
    const Dataset truth = load_csv(truth_path, info.schema);
    const auto* p = pred.pseudo_labels ? &*pred.pseudo_labels : pred.labels ? &*pred.labels : nullptr;
    if (!p) throw DataError(pred_path + ": no pseudo_label or label column");
    if (!truth.labels) throw DataError(truth_path + ": no label column");
    if (p->size() != truth.labels->size()) throw DimensionError("evaluate: prediction and truth row counts differ");
    const auto cm = eval::confusion(*truth.labels, *p, info.classes);
    const auto r = eval::metrics(cm);
    if (full_report) {
        write_text(ctx.path(artifact::metrics_csv), [&](std::ostream& o) { eval::write_metrics_csv(r, o); });
        write_json(ctx.path(artifact::metrics_json), eval::to_json(r));
        write_text(ctx.path(artifact::confusion), [&](std::ostream& o) { eval::write_confusion_csv(cm, o); });
        if (ctx.cfg.eval.gnuplot)
            write_text(ctx.path(artifact::f1_dat), [&](std::ostream& o) { eval::write_metrics_gnuplot(r, o); });
    }
    return r;
}

/// Predicts the test split with the final model and reports metrics; also
/// scores the fused pseudo-labels when ground truth for D_l is present.
inline eval::MetricsReport stage_evaluate(const Context& ctx) {
    const DatasetInfo info = load_info(ctx);
    ctx.require(artifact::final_model, "run `train-final` first");
    Dataset test = load_dataset(ctx, info, artifact::test, "run `split` first");
    const auto model = nn::load_checkpoint(ctx.path(artifact::final_model));
    if (model.out_width() != info.classes) throw ConfigError("evaluate: model class count != dataset class count");
    test.pseudo_labels = predict(model, test).labels;
    save_csv(test, ctx.path(artifact::predictions));
    const auto r = evaluate_files(ctx, info, ctx.path(artifact::predictions), ctx.path(artifact::test), true);
    if (ctx.has(artifact::pseudo) && ctx.has(artifact::unlabeled_truth)) {
        const auto pr = evaluate_files(ctx, info, ctx.path(artifact::pseudo), ctx.path(artifact::unlabeled_truth), false);
        write_json(ctx.path(artifact::pseudo_metrics), eval::to_json(pr));
    }
    if (ctx.cfg.eval.gnuplot && ctx.has(artifact::cl_report)) {
        const json rep = nn::read_json_file(ctx.path(artifact::cl_report));
        std::vector<std::vector<std::size_t>> hist;
        std::vector<double> th, mean;
        for (const auto& c : rep.at("classes")) {
            hist.push_back(c.at("histogram").get<std::vector<std::size_t>>());
            th.push_back(c.at("threshold").get<double>());
            mean.push_back(c.at("mean_self_confidence").get<double>());
        }
        write_text(ctx.path(artifact::cl_hist_dat),
                   [&](std::ostream& o) { eval::write_histogram_gnuplot(hist, th, mean, o); });
    }
    ctx.info("evaluate: accuracy " + csv_detail::format_double(r.accuracy) + ", macro F1 " +
             csv_detail::format_double(r.macro.f1));
    return r;
}

/// All stages in order. Data comes from `inputs` (pcap) when set, else synth.
inline eval::MetricsReport run_pipeline(const Context& ctx) {
    std::filesystem::create_directories(ctx.dir);
    json resolved = to_json(ctx.cfg);
    resolved.erase("output_dir");
    write_json(ctx.path(artifact::config), resolved);
    if (ctx.cfg.inputs.empty()) stage_synth(ctx);
    else stage_extract(ctx, ctx.cfg.inputs);
    stage_split(ctx);
    const auto& mode = ctx.cfg.fusion.branches;
    if (mode != "tabcl") stage_pretrain_ae(ctx);
    if (mode != "ae") stage_pretrain_tabcl(ctx);
    stage_pseudo_label(ctx);
    stage_fuse(ctx);
    if (ctx.cfg.final.weights == "cl") stage_cl(ctx);
    stage_train_final(ctx);
    return stage_evaluate(ctx);
}

}  // namespace ssltraffic::pipeline
