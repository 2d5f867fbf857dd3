#pragma once

// `pgtask` command line. Every subcommand validates its flags before doing
// any work; exit codes are 0 (success), 1 (validation error), 2 (runtime failure).

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pgtask/alignment.hpp"
#include "pgtask/annotation.hpp"
#include "pgtask/annotation_server.hpp"
#include "pgtask/corpus.hpp"
#include "pgtask/generator.hpp"
#include "pgtask/metrics.hpp"
#include "pgtask/nli.hpp"
#include "pgtask/pgd.hpp"

namespace pgtask::cli {

namespace fs = std::filesystem;

/// Options whose value only names where results go; they are left out of the
/// recorded run config so relocating outputs does not change their content.
inline bool is_output_option(const std::string& name) { return name == "--out" || name == "--histogram"; }

/// The parsed flags of a subcommand as JSON, plus a stable hash of it.
struct RunConfig {
    nlohmann::json json;
    std::string hash;

    static RunConfig from(const CLI::App& sub) {
        nlohmann::json options = nlohmann::json::object();
        for (const CLI::Option* opt : sub.get_options()) {
            const auto name = opt->get_name();
            if (name == "--help" || is_output_option(name)) continue;
            if (opt->count() > 0) {
                const auto& res = opt->results();
                options[name] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
            } else {
                options[name] = opt->get_default_str();
            }
        }
        RunConfig rc;
        rc.json = {{"subcommand", sub.get_name()}, {"options", options}};
        rc.hash = hex64(fnv1a64(rc.json.dump()));
        return rc;
    }

    nlohmann::json sidecar() const { return {{"config", json}, {"config_hash", hash}}; }
};

inline void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
    auto in = detail::open_input(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 0);
    }
}

/// Parses "split=path" or a bare path (train).
inline std::pair<Split, fs::path> split_path(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq != std::string::npos && eq > 0 && eq < 6) {
        const auto head = arg.substr(0, eq);
        if (head == "train" || head == "valid" || head == "test") return {parse_split(head), arg.substr(eq + 1)};
    }
    return {Split::Train, arg};
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = trim(item);
        if (t.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(std::string(t), &used));
            if (used != t.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ValidationError("invalid seed '" + std::string(t) + "'");
        }
    }
    if (out.empty()) throw ValidationError("no seeds given");
    return out;
}

inline DialogueCorpus load_corpus_reporting(const fs::path& path, Split split, std::ostream& err) {
    auto loaded = load_dialogue_corpus(path, split);
    for (const auto& issue : loaded.issues)
        err << (issue.rejected ? "rejected" : "warning") << ": " << path.string() << ":" << issue.record << " dialogue '"
            << issue.dialogue_id << "': " << issue.message << '\n';
    return std::move(loaded.corpus);
}

inline std::string format_summary(const ConfidenceSummary& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "entailed pairs: %zu  mean p(E): %.2f%%  variance: %.2f\n", s.count, s.mean, s.variance);
    return buf;
}

struct BenchmarkOutcome {
    AggregateReport aggregate;
    std::vector<MetricReport> runs;
};

/// Trains one decoder per seed on the train/valid splits, generates for the
/// test split, and scores each run. Seeds run concurrently with isolated state.
inline BenchmarkOutcome run_benchmark(const PgdDataset& ds, const std::string& decoder_spec, const GenTrainConfig& config,
                                      const TokenEmbedder& embedder, const fs::path& runs_dir, const RunConfig& rc) {
    const auto train = ds.split(Split::Train), valid = ds.split(Split::Valid), test = ds.split(Split::Test);
    if (train.empty() || valid.empty() || test.empty())
        throw ValidationError("benchmark needs non-empty train, valid and test splits");
    auto outcome = parallel_map(
        config.seeds.size(),
        [&](std::size_t i) {
            const auto seed = config.seeds[i];
            const DecoderHandle init = decoder_spec == "tiny" ? make_tiny_decoder(train, config.hidden, seed)
                                                              : make_decoder(decoder_spec);
            const auto trained = train_generator(init, train, valid, config, seed);
            const auto preds = predict(trained.handle, test, seed, config.max_new_tokens);
            const auto dir = runs_dir / ("seed-" + std::to_string(seed));
            fs::create_directories(dir);
            save_generator(trained, dir / "checkpoint");
            write_json(dir / "checkpoint" / "run.json", rc.sidecar());
            write_predictions(preds, dir / "predictions.jsonl");
            write_json(dir / "predictions.jsonl.meta.json", rc.sidecar());
            auto report = evaluate_predictions(preds, &embedder, seed);
            auto j = to_json(report);
            j["config_hash"] = rc.hash;
            write_json(dir / "report.json", j);
            return report;
        },
        static_cast<unsigned>(config.seeds.size()));
    return {aggregate(outcome), outcome};
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Profile generation pipeline: NLI alignment, dataset construction, annotation, generation, evaluation",
                 "pgtask"};
    app.require_subcommand(1);

    // nli-train
    std::string train_path, train_format = "dialogue-nli", extra_path, extra_format = "multi-genre", valid_path,
                valid_format = "dialogue-nli", out_path;
    NliTrainConfig nli_cfg;
    nli_cfg.learning_rate = 0.05;
    auto* nli_train = app.add_subcommand("nli-train", "Train the entailment classifier");
    nli_train->add_option("--train", train_path, "Training NLI JSON-lines")->required()->check(CLI::ExistingFile);
    nli_train->add_option("--train-format", train_format, "multi-genre | dialogue-nli")->capture_default_str();
    nli_train->add_option("--extra-train", extra_path, "Second training corpus merged in")->check(CLI::ExistingFile);
    nli_train->add_option("--extra-format", extra_format, "Format of --extra-train")->capture_default_str();
    nli_train->add_option("--valid", valid_path, "Validation NLI JSON-lines")->required()->check(CLI::ExistingFile);
    nli_train->add_option("--valid-format", valid_format)->capture_default_str();
    nli_train->add_option("--lr", nli_cfg.learning_rate)->capture_default_str();
    nli_train->add_option("--batch-size", nli_cfg.batch_size)->capture_default_str();
    nli_train->add_option("--epochs", nli_cfg.max_epochs)->capture_default_str();
    nli_train->add_option("--patience", nli_cfg.patience)->capture_default_str();
    nli_train->add_option("--seed", nli_cfg.seed)->capture_default_str();
    nli_train->add_option("--out", out_path, "Checkpoint root directory")->required();

    // nli-eval
    std::string checkpoint, test_path, test_format = "dialogue-nli";
    auto* nli_eval = app.add_subcommand("nli-eval", "Accuracy of a classifier on a labeled NLI set");
    nli_eval->add_option("--checkpoint", checkpoint, "Checkpoint directory or stub id")->required();
    nli_eval->add_option("--test", test_path)->required()->check(CLI::ExistingFile);
    nli_eval->add_option("--format", test_format)->capture_default_str();
    nli_eval->add_option("--out", out_path, "Optional JSON result file");

    // align
    std::string corpus_path, split_name = "train", nli_checkpoint, histogram_path;
    double bin_width = 1.0;
    auto* align = app.add_subcommand("align", "Align utterances with entailed profile sentences");
    align->add_option("--corpus", corpus_path, "Dialogue JSON-lines")->required()->check(CLI::ExistingFile);
    align->add_option("--split", split_name)->capture_default_str();
    align->add_option("--nli-checkpoint", nli_checkpoint, "Checkpoint directory or stub id")->required();
    align->add_option("--bin-width", bin_width, "Histogram bin width in percentage points")->capture_default_str();
    align->add_option("--out", out_path, "Aligned-pair JSON-lines")->required();
    align->add_option("--histogram", histogram_path, "Histogram CSV (default: <out>.hist.csv)");

    // build
    std::vector<std::string> pairs_args;
    double threshold = 0.99;
    auto* build = app.add_subcommand("build", "Assemble the dataset from aligned pairs");
    build->add_option("--pairs", pairs_args, "[split=]aligned-pair file; repeatable")->required();
    build->add_option("--threshold", threshold, "Keep pairs with confidence strictly above this")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    build->add_option("--out", out_path, "Dataset directory")->required();

    // stats
    std::string pgd_dir;
    bool stats_json = false;
    auto* stats = app.add_subcommand("stats", "Per-split dataset statistics");
    stats->add_option("--pgd", pgd_dir)->required()->check(CLI::ExistingDirectory);
    stats->add_flag("--json", stats_json, "Print JSON instead of the table");

    // sample-annotation
    std::string pairs_path, batch_id;
    std::vector<std::string> intervals = {"[50,70]", "]70,90]", "]90,100]"};
    std::size_t per_interval = 100;
    std::uint64_t sample_seed = 0;
    auto* sample = app.add_subcommand("sample-annotation", "Draw an annotation batch stratified by confidence");
    sample->add_option("--pairs", pairs_path)->required()->check(CLI::ExistingFile);
    // One value per flag: CLI11 would otherwise read "[50,70]" as a two-element list.
    sample->add_option("--interval", intervals, "Interval such as ]70,90]; repeatable")
        ->allow_extra_args(false)
        ->default_str("[50,70] ]70,90] ]90,100]");
    sample->add_option("--n", per_interval, "Samples per interval")->capture_default_str();
    sample->add_option("--seed", sample_seed)->capture_default_str();
    sample->add_option("--batch-id", batch_id);
    sample->add_option("--out", out_path, "Batch JSON")->required();

    // serve-annotation
    std::vector<std::string> batch_paths;
    std::string log_path, host = "127.0.0.1";
    int port = 8080;
    auto* serve = app.add_subcommand("serve-annotation", "Serve annotation batches over HTTP");
    serve->add_option("--batch", batch_paths, "Batch JSON; repeatable")->required()->check(CLI::ExistingFile);
    serve->add_option("--log", log_path, "Append-only judgment log")->required();
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();

    // annotation-report
    auto* report = app.add_subcommand("annotation-report", "Agreement and per-interval accuracy from a judgment log");
    report->add_option("--batch", batch_paths)->required()->check(CLI::ExistingFile);
    report->add_option("--log", log_path)->required()->check(CLI::ExistingFile);
    report->add_option("--out", out_path, "Optional report JSON");

    // gen-train
    std::string decoder = "tiny";
    GenTrainConfig gen_cfg;
    gen_cfg.learning_rate = 0.01;
    std::uint64_t gen_seed = 1;
    auto add_gen_options = [&](CLI::App* sub) {
        sub->add_option("--decoder", decoder, "tiny | checkpoint directory | pretrained id")->capture_default_str();
        sub->add_option("--lr", gen_cfg.learning_rate)->capture_default_str();
        sub->add_option("--batch-size", gen_cfg.batch_size)->capture_default_str();
        sub->add_option("--grad-accum", gen_cfg.grad_accum)->capture_default_str();
        sub->add_option("--epochs", gen_cfg.max_epochs)->capture_default_str();
        sub->add_option("--patience", gen_cfg.patience)->capture_default_str();
        sub->add_option("--hidden", gen_cfg.hidden)->capture_default_str();
        sub->add_option("--max-new-tokens", gen_cfg.max_new_tokens)->capture_default_str();
    };
    auto* gen_train = app.add_subcommand("gen-train", "Train a profile generator");
    gen_train->add_option("--pgd", pgd_dir)->required()->check(CLI::ExistingDirectory);
    gen_train->add_option("--seed", gen_seed)->capture_default_str();
    add_gen_options(gen_train);
    gen_train->add_option("--out", out_path, "Checkpoint directory")->required();

    // generate
    std::string utterance;
    std::size_t max_new = 50;
    auto* gen = app.add_subcommand("generate", "Greedy profile generation");
    gen->add_option("--checkpoint", checkpoint)->required();
    auto* utt_opt = gen->add_option("--utterance", utterance, "Single utterance");
    auto* pgd_opt = gen->add_option("--pgd", pgd_dir, "Dataset directory to predict on")->check(CLI::ExistingDirectory);
    utt_opt->excludes(pgd_opt);
    gen->add_option("--split", split_name, "Split of --pgd")->capture_default_str();
    gen->add_option("--max-new-tokens", max_new)->capture_default_str();
    gen->add_option("--seed", gen_seed, "Seed recorded in the prediction dump")->capture_default_str();
    gen->add_option("--out", out_path, "Prediction dump (with --pgd)");

    // evaluate
    std::vector<std::string> prediction_paths;
    std::string embedder_spec = "stub:hash-embed", model_name = "model";
    auto* evaluate = app.add_subcommand("evaluate", "Score prediction dumps");
    evaluate->add_option("--predictions", prediction_paths, "Prediction dump; repeat once per seed")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--embedder", embedder_spec)->capture_default_str();
    evaluate->add_option("--model-name", model_name)->capture_default_str();
    evaluate->add_option("--out", out_path, "Report JSON");

    // benchmark
    std::vector<std::string> corpus_args;
    std::string seeds_arg = "1,2,3,4,5";
    auto* bench = app.add_subcommand("benchmark", "Build (optionally), train and evaluate over several seeds");
    auto* bench_corpus = bench->add_option("--corpus", corpus_args, "[split=]dialogue file; repeatable");
    auto* bench_pgd = bench->add_option("--pgd", pgd_dir, "Existing dataset directory")->check(CLI::ExistingDirectory);
    bench_corpus->excludes(bench_pgd);
    bench->add_option("--nli-checkpoint", nli_checkpoint, "Classifier for --corpus")->default_str("stub:overlap");
    bench->add_option("--threshold", threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    bench->add_option("--seeds", seeds_arg)->capture_default_str();
    add_gen_options(bench);
    bench->add_option("--embedder", embedder_spec)->capture_default_str();
    bench->add_option("--model-name", model_name)->capture_default_str();
    bench->add_option("--out", out_path, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (nli_train->parsed()) {
            nli_cfg.validate();
            const auto rc = RunConfig::from(*nli_train);
            auto train = load_nli_corpus(train_path, parse_nli_format(train_format));
            if (!extra_path.empty())
                train = merge_training_sets(load_nli_corpus(extra_path, parse_nli_format(extra_format)), train, nli_cfg.seed);
            const auto valid = load_nli_corpus(valid_path, parse_nli_format(valid_format));
            const auto trained = train_nli(train, valid, nli_cfg);
            const auto dir = save_nli_checkpoint(trained, out_path);
            write_json(dir / "run.json", rc.sidecar());
            out << "best validation accuracy " << trained.run.best_metric * 100.0 << "% at epoch "
                << trained.run.best_epoch << " (stopped after " << trained.run.stopped_epoch << ")\n"
                << "checkpoint: " << dir.string() << '\n';
        } else if (nli_eval->parsed()) {
            const auto handle = make_classifier(checkpoint);
            const double acc = evaluate_accuracy(handle, load_nli_corpus(test_path, parse_nli_format(test_format)));
            out << "accuracy " << acc * 100.0 << "%\n";
            if (!out_path.empty()) {
                auto j = RunConfig::from(*nli_eval).sidecar();
                j["accuracy"] = acc;
                j["classifier"] = handle.id();
                write_json(out_path, j);
            }
        } else if (align->parsed()) {
            const auto split = parse_split(split_name);
            const auto rc = RunConfig::from(*align);
            const auto classifier = make_classifier(nli_checkpoint);
            const auto corpus = load_corpus_reporting(corpus_path, split, err);
            const auto pairs = align_corpus(corpus, classifier);
            ensure_parent(out_path);
            write_aligned_pairs(pairs, out_path);
            auto meta = rc.sidecar();
            meta["classifier"] = classifier.id();
            meta["split"] = to_string(split);
            meta["pairs"] = pairs.size();
            if (!pairs.empty()) {
                const auto summary = confidence_summary(pairs, bin_width);
                write_histogram_csv(summary, histogram_path.empty() ? out_path + ".hist.csv" : histogram_path);
                meta["mean_percent"] = summary.mean;
                meta["variance_percent2"] = summary.variance;
                out << format_summary(summary);
            } else {
                out << "no entailed pairs\n";
            }
            write_json(out_path + ".meta.json", meta);
        } else if (build->parsed()) {
            const auto rc = RunConfig::from(*build);
            std::vector<SplitPairs> inputs;
            std::string classifier_id;
            for (const auto& arg : pairs_args) {
                const auto [split, path] = split_path(arg);
                if (!fs::exists(path)) throw ValidationError("pairs file not found: " + path.string());
                inputs.push_back({split, read_aligned_pairs(path)});
                if (const fs::path side = path.string() + ".meta.json"; fs::exists(side))
                    classifier_id = read_json(side).value("classifier", classifier_id);
            }
            PgdDataset ds;
            ds.records = assemble_records(inputs, threshold);
            ds.metadata = {threshold, classifier_id, build_timestamp(), rc.json, rc.hash};
            if (ds.records.empty()) warn("build: dataset is empty");
            write_pgd(ds, out_path);
            out << format_stats_table(compute_statistics(ds.records));
        } else if (stats->parsed()) {
            const auto s = compute_statistics(read_pgd(pgd_dir).records);
            out << (stats_json ? to_json(s).dump(2) + "\n" : format_stats_table(s));
        } else if (sample->parsed()) {
            std::vector<IntervalSpec> specs;
            for (const auto& t : intervals) specs.push_back(parse_interval(t));
            const auto batch = stratified_sample(read_aligned_pairs(pairs_path), specs, per_interval, sample_seed, batch_id);
            ensure_parent(out_path);
            write_batch(batch, out_path);
            out << "batch " << batch.id << ": " << batch.items.size() << " items\n";
        } else if (serve->parsed()) {
            JudgmentStore store(log_path);
            for (const auto& p : batch_paths) store.add_batch(read_batch(p));
            if (fs::exists(log_path)) store.replay(log_path);
            AnnotationServer server(store);
            static std::atomic<bool> stop_requested{false};
            stop_requested = false;
            std::signal(SIGINT, [](int) { stop_requested = true; });
            std::signal(SIGTERM, [](int) { stop_requested = true; });
            const int bound = server.start(host, port);
            out << "serving annotation batches on http://" << host << ":" << bound << '\n' << std::flush;
            while (!stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
        } else if (report->parsed()) {
            JudgmentStore store;
            std::vector<AnnotationBatch> batches;
            for (const auto& p : batch_paths) {
                batches.push_back(read_batch(p));
                store.add_batch(batches.back());
            }
            store.replay(log_path);
            const auto snapshot = store.snapshot();
            nlohmann::json all = nlohmann::json::array();
            for (const auto& b : batches) all.push_back(to_json(make_report(b, snapshot)));
            const auto j = all.size() == 1 ? all.front() : all;
            out << j.dump(2) << '\n';
            if (!out_path.empty()) write_json(out_path, j);
        } else if (gen_train->parsed()) {
            gen_cfg.seeds = {gen_seed};
            gen_cfg.validate();
            const auto rc = RunConfig::from(*gen_train);
            const auto ds = read_pgd(pgd_dir);
            const auto train = ds.split(Split::Train), valid = ds.split(Split::Valid);
            const auto init = decoder == "tiny" ? make_tiny_decoder(train, gen_cfg.hidden, gen_seed) : make_decoder(decoder);
            const auto trained = train_generator(init, train, valid, gen_cfg, gen_seed);
            save_generator(trained, out_path);
            write_json(fs::path(out_path) / "run.json", rc.sidecar());
            out << "best validation loss " << trained.run.best_metric << " at epoch " << trained.run.best_epoch << '\n';
        } else if (gen->parsed()) {
            const auto model = make_decoder(checkpoint);
            if (!utterance.empty()) {
                out << generate(model, utterance, max_new) << '\n';
            } else if (!pgd_dir.empty()) {
                if (out_path.empty()) throw ValidationError("--out is required with --pgd");
                const auto preds = predict(model, read_pgd(pgd_dir).split(parse_split(split_name)), gen_seed, max_new);
                ensure_parent(out_path);
                write_predictions(preds, out_path);
                write_json(out_path + ".meta.json", RunConfig::from(*gen).sidecar());
                out << preds.size() << " predictions written\n";
            } else {
                throw ValidationError("generate needs --utterance or --pgd");
            }
        } else if (evaluate->parsed()) {
            const auto rc = RunConfig::from(*evaluate);
            const auto embedder = make_embedder(embedder_spec);
            std::vector<MetricReport> reports;
            for (const auto& p : prediction_paths) {
                const auto preds = read_predictions(p);
                reports.push_back(evaluate_predictions(preds, embedder.get(), preds.empty() ? 0 : preds.front().seed));
            }
            const auto agg = aggregate(reports);
            out << format_results_table({{model_name, agg.mean}});
            if (!out_path.empty()) {
                auto j = rc.sidecar();
                j["model"] = model_name;
                j["aggregate"] = to_json(agg);
                j["runs"] = nlohmann::json::array();
                for (const auto& r : reports) j["runs"].push_back(to_json(r));
                write_json(out_path, j);
            }
        } else if (bench->parsed()) {
            gen_cfg.seeds = parse_seeds(seeds_arg);
            gen_cfg.validate();
            if (corpus_args.empty() && pgd_dir.empty()) throw ValidationError("benchmark needs --corpus or --pgd");
            const auto rc = RunConfig::from(*bench);
            const auto embedder = make_embedder(embedder_spec);
            const fs::path root = out_path;
            fs::create_directories(root);
            PgdDataset ds;
            if (!corpus_args.empty()) {
                const auto classifier = make_classifier(nli_checkpoint.empty() ? "stub:overlap" : nli_checkpoint);
                std::vector<SplitPairs> inputs;
                for (const auto& arg : corpus_args) {
                    const auto [split, path] = split_path(arg);
                    if (!fs::exists(path)) throw ValidationError("corpus file not found: " + path.string());
                    const auto corpus = load_corpus_reporting(path, split, err);
                    auto pairs = align_corpus(corpus, classifier);
                    const auto dump = root / ("pairs-" + std::string(to_string(split)) + ".jsonl");
                    write_aligned_pairs(pairs, dump);
                    auto meta = rc.sidecar();
                    meta["classifier"] = classifier.id();
                    meta["split"] = to_string(split);
                    write_json(dump.string() + ".meta.json", meta);
                    inputs.push_back({split, std::move(pairs)});
                }
                ds.records = assemble_records(inputs, threshold);
                ds.metadata = {threshold, classifier.id(), build_timestamp(), rc.json, rc.hash};
                write_pgd(ds, root / "pgd");
            } else {
                ds = read_pgd(pgd_dir);
            }
            const auto outcome = run_benchmark(ds, decoder, gen_cfg, *embedder, root / "runs", rc);
            auto j = rc.sidecar();
            j["model"] = model_name;
            j["train_config"] = gen_cfg.to_json();
            j["aggregate"] = to_json(outcome.aggregate);
            write_json(root / "report.json", j);
            const auto table = format_results_table({{model_name, outcome.aggregate.mean}});
            std::ofstream(root / "report.txt", std::ios::binary) << table;
            out << format_stats_table(compute_statistics(ds.records)) << table;
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace pgtask::cli
