#pragma once

// Command-line surface: learn, augment, infer, eval and pipeline.
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include "triplet_debias/augment.hpp"
#include "triplet_debias/error.hpp"
#include "triplet_debias/inference.hpp"
#include "triplet_debias/io.hpp"
#include "triplet_debias/metrics.hpp"
#include "triplet_debias/parallel.hpp"
#include "triplet_debias/prior.hpp"
#include "triplet_debias/vocabulary.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace triplet_debias::cli {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kRecordFormatVersion = 1;

inline Vocabulary read_vocabulary(const std::string& path) {
    auto in = open_input(path);
    return load_vocabulary(in);
}

inline PriorModel read_prior(const std::string& path) {
    auto in = open_input(path);
    return load_prior(in);
}

inline TripletCounts read_counts(const std::string& path, const Vocabulary& vocab) {
    auto in = open_input(path);
    const auto annotations = load_annotations(in);
    return accumulate_counts(annotations, vocab);
}

inline std::string format_count(double c) { return count_value(c).dump(); }

inline void learn(const std::string& counts_path, const std::string& vocab_path, const std::string& out_path,
                  double smoothing, std::ostream& log) {
    const auto vocab = read_vocabulary(vocab_path);
    const auto counts = read_counts(counts_path, vocab);
    const auto prior = estimate_prior(counts, vocab, PriorConfig{smoothing});
    auto out = open_output(out_path);
    out << prior_to_json(prior).dump() << '\n';
    if (!out) throw IoError("failed writing " + out_path);
    log << "valid triplets: " << format_count(counts.valid_total()) << " (" << counts.valid.size()
        << " distinct), out-of-vocabulary triplets: " << format_count(counts.invalid_total())
        << ", distinct subject-object pairs: " << prior.num_rows() << '\n';
}

inline void augment(const std::string& counts_path, const std::string& vocab_path, const std::string& embeddings_path,
                    const std::string& out_path, const AugmentationConfig& config, std::ostream& log) {
    const auto vocab = read_vocabulary(vocab_path);
    const auto counts = read_counts(counts_path, vocab);
    auto emb_in = open_input(embeddings_path);
    const auto table = load_embeddings(emb_in);
    const auto augmented = augment_counts(counts, vocab, table, config);
    auto out = open_output(out_path);
    write_counts(out, augmented, vocab);
    if (!out) throw IoError("failed writing " + out_path);
    log << "valid triplets: " << format_count(counts.valid_total()) << " -> "
        << format_count(augmented.valid_total()) << '\n';
}

// Streams images in bounded batches; output order follows input order.
inline void infer(const std::string& prior_path, const std::string& measurements_path, const std::string& out_path,
                  const InferenceConfig& config, std::size_t workers, const std::optional<std::string>& vocab_path,
                  std::ostream& log) {
    const auto prior = read_prior(prior_path);
    const std::string prior_hash = prior.vocabulary().hash();
    if (vocab_path && read_vocabulary(*vocab_path).hash() != prior_hash) {
        throw ValidationError("vocabulary hash mismatch between " + *vocab_path + " and prior " + prior_path);
    }
    auto in = open_input(measurements_path);
    MeasurementReader reader(in);
    if (reader.vocabulary_hash() && *reader.vocabulary_hash() != prior_hash) {
        throw ValidationError("vocabulary hash mismatch: measurements declare " + *reader.vocabulary_hash() +
                              ", prior has " + prior_hash);
    }
    auto out = open_output(out_path);

    workers = std::max<std::size_t>(workers, 1);
    const std::size_t batch_size = workers * 16;
    std::size_t images = 0;
    const auto start = std::chrono::steady_clock::now();
    std::vector<MeasurementGraph> batch;
    auto flush = [&] {
        const auto results = parallel_map(std::span<const MeasurementGraph>(batch), workers,
                                          [&](const MeasurementGraph& g) { return debias_graph(g, prior, config); });
        for (const auto& r : results) write_record(out, to_json(r));
        images += batch.size();
        batch.clear();
    };
    while (auto g = reader.next()) {
        batch.push_back(std::move(*g));
        if (batch.size() == batch_size) flush();
    }
    flush();
    out.flush();
    if (!out) throw IoError("failed writing " + out_path);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char line[128];
    std::snprintf(line, sizeof(line), "images: %zu, seconds: %.3f, s/image: %.5f\n", images, seconds,
                  images ? seconds / static_cast<double>(images) : 0.0);
    log << line;
}

inline EvalReport eval(const std::string& predictions_path, const std::string& gt_path,
                       const std::optional<std::string>& prior_path, bool require_zero_shot, EvalConfig config,
                       const std::optional<std::string>& report_path, const std::optional<std::string>& csv_path,
                       std::ostream& log) {
    if (require_zero_shot && !prior_path) {
        throw ValidationError("zero-shot recall needs the seen triplets of a prior model; pass --prior");
    }
    std::optional<PriorModel> prior;
    if (prior_path) prior.emplace(read_prior(*prior_path));

    auto pred_in = open_input(predictions_path);
    const auto predictions = load_debiased(pred_in);
    auto gt_in = open_input(gt_path);
    const auto gts = load_ground_truth(gt_in);
    if (prior) {
        config.num_relations = prior->num_relations();
        for (const auto& g : gts) validate(g, prior->num_entities(), prior->num_relations());
    }
    const auto report = evaluate(predictions, gts, config, prior ? &prior->seen_triplets() : nullptr);

    if (report_path) {
        auto out = open_output(*report_path);
        out << report_to_json(report).dump(2) << '\n';
        if (!out) throw IoError("failed writing " + *report_path);
    }
    if (csv_path) {
        auto out = open_output(*csv_path);
        std::vector<std::string> names;
        if (prior) names = prior->vocabulary().predicates();
        write_per_predicate_csv(out, report, names);
        if (!out) throw IoError("failed writing " + *csv_path);
    }
    log << format_report(report);
    return report;
}

// Everything a pipeline run needs; also the schema of the JSON config file.
struct RunConfig {
    std::string vocab;
    std::string counts;
    std::string embeddings;
    std::string measurements;
    std::string ground_truth;
    std::string out_dir;
    double epsilon = 0.05;
    bool nearest_only = false;
    std::optional<double> entropy_threshold;
    std::string conflict = "two_step";
    std::string task = "sgcls";
    std::vector<std::size_t> k{50, 100};
    double iou = 0.5;
    double smoothing = 0.0;
    std::size_t workers = default_workers();
};

/// Fills every field whose flag was not given on the command line from the
/// JSON config document. Keys are the flag names without leading dashes.
inline void apply_config_file(const std::string& path, const CLI::App& cmd, RunConfig& cfg) {
    auto in = open_input(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("malformed config file " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config file " + path + " must hold a JSON object");
    auto unset = [&](const char* flag) { return cmd.get_option(std::string("--") + flag)->count() == 0; };
    try {
        for (const auto& [key, value] : doc.items()) {
            if (!unset(key.c_str())) continue;
            if (key == "vocab") cfg.vocab = value.get<std::string>();
            else if (key == "counts") cfg.counts = value.get<std::string>();
            else if (key == "embeddings") cfg.embeddings = value.get<std::string>();
            else if (key == "measurements") cfg.measurements = value.get<std::string>();
            else if (key == "ground-truth") cfg.ground_truth = value.get<std::string>();
            else if (key == "out-dir") cfg.out_dir = value.get<std::string>();
            else if (key == "epsilon") cfg.epsilon = value.get<double>();
            else if (key == "nearest-only") cfg.nearest_only = value.get<bool>();
            else if (key == "entropy-threshold") cfg.entropy_threshold = value.get<double>();
            else if (key == "conflict") cfg.conflict = value.get<std::string>();
            else if (key == "task") cfg.task = value.get<std::string>();
            else if (key == "k") cfg.k = value.get<std::vector<std::size_t>>();
            else if (key == "iou") cfg.iou = value.get<double>();
            else if (key == "smoothing") cfg.smoothing = value.get<double>();
            else if (key == "workers") cfg.workers = value.get<std::size_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("bad value in config file " + path + ": " + e.what());
    } catch (const CLI::OptionNotFound&) {
        throw ValidationError("unknown key in config file " + path);
    }
}

inline void check_ks(const std::vector<std::size_t>& ks) {
    if (ks.empty()) throw ValidationError("--k needs at least one value");
    for (std::size_t i = 1; i < ks.size(); ++i) {
        if (ks[i] <= ks[i - 1]) throw ValidationError("--k values must be ascending");
    }
}

inline InferenceConfig inference_config(const std::optional<double>& threshold, const std::string& conflict,
                                        const std::string& task) {
    InferenceConfig cfg;
    cfg.entropy_threshold = threshold;
    cfg.conflict = parse_conflict_strategy(conflict);
    cfg.task = parse_task_mode(task);
    return cfg;
}

inline void pipeline(const RunConfig& cfg, std::ostream& log) {
    for (const auto* p : {&cfg.vocab, &cfg.counts, &cfg.measurements, &cfg.ground_truth, &cfg.out_dir}) {
        if (p->empty()) {
            throw ValidationError("pipeline needs vocab, counts, measurements, ground-truth and out-dir");
        }
    }
    check_ks(cfg.k);
    const auto infer_cfg = inference_config(cfg.entropy_threshold, cfg.conflict, cfg.task);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir + ": " + ec.message());
    const std::filesystem::path dir(cfg.out_dir);

    std::string counts = cfg.counts;
    if (!cfg.embeddings.empty()) {
        counts = (dir / "augmented_counts.jsonl").string();
        augment(cfg.counts, cfg.vocab, cfg.embeddings, counts, {cfg.epsilon, cfg.nearest_only}, log);
    }
    const auto prior = (dir / "prior.json").string();
    learn(counts, cfg.vocab, prior, cfg.smoothing, log);
    const auto predictions = (dir / "predictions.jsonl").string();
    infer(prior, cfg.measurements, predictions, infer_cfg, cfg.workers, cfg.vocab, log);
    EvalConfig eval_cfg;
    eval_cfg.ks = cfg.k;
    eval_cfg.iou_threshold = cfg.iou;
    eval(predictions, cfg.ground_truth, prior, false, eval_cfg, (dir / "report.json").string(),
         (dir / "per_predicate.csv").string(), log);
}

/// Runs the tool with argv-style arguments (args[0] is the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Debias scene-graph relationship predictions with a within-triplet Bayesian prior",
                 "triplet-debias"};
    app.require_subcommand(0, 1);
    bool show_version = false;
    app.add_flag("--version", show_version, "Print tool and file format versions");

    std::string counts, vocab, out_path, embeddings, prior, measurements, predictions, ground_truth, report, csv;
    double smoothing = 0.0;

    auto* learn_cmd = app.add_subcommand("learn", "Estimate the prior model from triplet counts");
    learn_cmd->add_option("--counts", counts, "Counts file")->required();
    learn_cmd->add_option("--vocab", vocab, "Vocabulary file")->required();
    learn_cmd->add_option("--out", out_path, "Prior model output")->required();
    learn_cmd->add_option("--smoothing", smoothing, "Add-k smoothing of stored rows")->capture_default_str();

    AugmentationConfig aug_cfg;
    auto* aug_cmd = app.add_subcommand("augment", "Augment valid counts from nearby out-of-vocabulary triplets");
    aug_cmd->add_option("--counts", counts, "Counts file")->required();
    aug_cmd->add_option("--vocab", vocab, "Vocabulary file")->required();
    aug_cmd->add_option("--embeddings", embeddings, "Embedding file")->required();
    aug_cmd->add_option("--out", out_path, "Augmented counts output")->required();
    aug_cmd->add_option("--epsilon", aug_cfg.epsilon, "Cosine-distance radius")->capture_default_str();
    aug_cmd->add_flag("--nearest-only", aug_cfg.nearest_only, "Credit only the nearest valid triplet");

    std::optional<double> threshold;
    std::string conflict = "two_step";
    std::string task = "sgcls";
    std::size_t workers = default_workers();
    std::string infer_vocab;
    auto* infer_cmd = app.add_subcommand("infer", "Debias measurement graphs");
    infer_cmd->add_option("--prior", prior, "Prior model")->required();
    infer_cmd->add_option("--measurements", measurements, "Measurement file")->required();
    infer_cmd->add_option("--out", out_path, "Debiased graph output")->required();
    infer_cmd->add_option("--entropy-threshold", threshold, "Refine pairs with entropy <= threshold (default ln N_r)");
    infer_cmd->add_option("--conflict", conflict, "two_step | mode | none")->capture_default_str();
    infer_cmd->add_option("--task", task, "predcls | sgcls | sgdet")->capture_default_str();
    infer_cmd->add_option("--workers", workers, "Parallel workers");
    infer_cmd->add_option("--vocab", infer_vocab, "Vocabulary to check against the prior");

    std::vector<std::size_t> ks{50, 100};
    double iou_threshold = 0.5;
    bool zero_shot = false;
    auto* eval_cmd = app.add_subcommand("eval", "Graph-constrained recall metrics");
    eval_cmd->add_option("--predictions", predictions, "Debiased graph file")->required();
    eval_cmd->add_option("--ground-truth", ground_truth, "Ground-truth file")->required();
    eval_cmd->add_option("--prior", prior, "Prior model (enables zero-shot recall)");
    eval_cmd->add_flag("--zero-shot", zero_shot, "Require zero-shot recall");
    eval_cmd->add_option("--k", ks, "Comma-separated K values")->delimiter(',');
    eval_cmd->add_option("--iou", iou_threshold, "IoU threshold")->capture_default_str();
    eval_cmd->add_option("--report", report, "JSON report output");
    eval_cmd->add_option("--per-predicate-csv", csv, "Per-predicate recall CSV output");

    RunConfig run_cfg;
    std::string config_path;
    auto* pipe_cmd = app.add_subcommand("pipeline", "learn -> augment -> infer -> eval");
    pipe_cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    pipe_cmd->add_option("--vocab", run_cfg.vocab);
    pipe_cmd->add_option("--counts", run_cfg.counts);
    pipe_cmd->add_option("--embeddings", run_cfg.embeddings, "Omit to skip augmentation");
    pipe_cmd->add_option("--measurements", run_cfg.measurements);
    pipe_cmd->add_option("--ground-truth", run_cfg.ground_truth);
    pipe_cmd->add_option("--out-dir", run_cfg.out_dir);
    pipe_cmd->add_option("--epsilon", run_cfg.epsilon);
    pipe_cmd->add_flag("--nearest-only", run_cfg.nearest_only);
    pipe_cmd->add_option("--entropy-threshold", run_cfg.entropy_threshold);
    pipe_cmd->add_option("--conflict", run_cfg.conflict);
    pipe_cmd->add_option("--task", run_cfg.task);
    pipe_cmd->add_option("--k", run_cfg.k)->delimiter(',');
    pipe_cmd->add_option("--iou", run_cfg.iou);
    pipe_cmd->add_option("--smoothing", run_cfg.smoothing);
    pipe_cmd->add_option("--workers", run_cfg.workers);

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (show_version) {
            out << "triplet-debias " << kToolVersion << " (prior format " << kPriorFormatVersion << ", record format "
                << kRecordFormatVersion << ")\n";
            return 0;
        }
        if (learn_cmd->parsed()) {
            learn(counts, vocab, out_path, smoothing, out);
        } else if (aug_cmd->parsed()) {
            augment(counts, vocab, embeddings, out_path, aug_cfg, out);
        } else if (infer_cmd->parsed()) {
            infer(prior, measurements, out_path, inference_config(threshold, conflict, task), workers,
                  infer_vocab.empty() ? std::nullopt : std::optional<std::string>(infer_vocab), out);
        } else if (eval_cmd->parsed()) {
            check_ks(ks);
            EvalConfig cfg;
            cfg.ks = ks;
            cfg.iou_threshold = iou_threshold;
            auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
            eval(predictions, ground_truth, opt(prior), zero_shot, cfg, opt(report), opt(csv), out);
        } else if (pipe_cmd->parsed()) {
            if (!config_path.empty()) apply_config_file(config_path, *pipe_cmd, run_cfg);
            pipeline(run_cfg, out);
        } else {
            out << app.help();
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

} // namespace triplet_debias::cli
