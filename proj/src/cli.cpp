#include "namelink/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "namelink/corpus_io.hpp"
#include "namelink/error.hpp"
#include "namelink/gtmine.hpp"
#include "namelink/inference.hpp"
#include "namelink/metrics.hpp"
#include "namelink/serialize.hpp"
#include "namelink/synthgen.hpp"
#include "namelink/trainer.hpp"
#include "namelink/version.hpp"

namespace namelink::cli {

using nlohmann::json;

namespace {

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

json read_json_file_or_empty(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open config " + path);
    try {
        json j;
        is >> j;
        return j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::vector<const Example*> resolve_split(const Corpus& corpus,
                                          const std::vector<std::string>& ids) {
    std::map<std::string, const Example*> by_id;
    for (const Example& ex : corpus.examples) by_id[ex.id] = &ex;
    std::vector<const Example*> out;
    for (const std::string& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ValidationError("split references unknown example " + id);
        out.push_back(it->second);
    }
    return out;
}

// ---- gen ----

struct GenArgs {
    std::string out_dir;
    std::string config_path;
    std::int64_t count = 1000;
    std::uint64_t seed = 0;
    bool seed_set = false;
    double split_fraction = 0.08;
};

int run_gen(const GenArgs& args) {
    Timer timer;
    WorldConfig cfg;
    apply_json(cfg, read_json_file_or_empty(args.config_path));
    if (args.seed_set) cfg.seed = args.seed;

    const World world = generate_world(cfg);
    GeneratedCorpus gen = generate_corpus(world, args.count);
    const std::filesystem::path dir(args.out_dir);
    save_corpus(gen.corpus, dir);
    save_oracle(gen.oracle, dir / "oracle.jsonl");
    const SplitAssignment splits =
        make_splits(gen.corpus.examples, args.split_fraction, cfg.seed);
    save_splits(splits, dir / "splits.json");

    json effective = to_json(cfg);
    effective["count"] = args.count;
    effective["split_fraction"] = args.split_fraction;
    RunManifest manifest;
    manifest.command = "gen";
    manifest.config_digest = config_hash(effective);
    manifest.seed = cfg.seed;
    manifest.outputs = {(dir / "manifest.json").string(), (dir / "records.jsonl").string(),
                        (dir / "features.bin").string(), (dir / "oracle.jsonl").string(),
                        (dir / "splits.json").string()};
    manifest.wall_time_s = timer.seconds();
    save_run_manifest(manifest, dir / "run_manifest.json");

    std::cout << "generated " << gen.corpus.examples.size() << " examples (train "
              << splits.train_ids.size() << ", val " << splits.val_ids.size() << ", test "
              << splits.test_ids.size() << ") in " << args.out_dir << "\n";
    return 0;
}

// ---- mine ----

struct MineArgs {
    std::string corpus_dir;
    std::string out_path;
    double threshold = kDefaultLinkThreshold;
    double area_ratio = kDefaultAreaRatio;
    double blur_threshold = kDefaultBlurThreshold;
};

int run_mine(const MineArgs& args) {
    Timer timer;
    const Corpus corpus = load_corpus(args.corpus_dir);
    const std::filesystem::path oracle_path =
        std::filesystem::path(args.corpus_dir) / "oracle.jsonl";
    std::map<std::string, const OracleRecord*> oracle_by_id;
    const std::vector<OracleRecord> oracle = load_oracle(oracle_path);
    for (const OracleRecord& r : oracle) oracle_by_id[r.example_id] = &r;

    std::ofstream os(args.out_path, std::ios::binary);
    if (!os) throw IoError("cannot write " + args.out_path);
    std::size_t examples_with_links = 0, total_links = 0;
    for (const Example& ex : corpus.examples) {
        auto it = oracle_by_id.find(ex.id);
        if (it == oracle_by_id.end())
            throw ValidationError("no oracle record with reference embeddings for " + ex.id);
        const LinkEstimate est =
            estimate_links_for_example(ex, it->second->references, args.threshold);
        const std::vector<UnlinkedBoxLabel> labels =
            select_unlinked_boxes(ex, est, args.area_ratio, args.blur_threshold);
        json links = json::array();
        for (const MinedLink& l : est.links)
            links.push_back(json::array({l.person_index, l.detection_index, l.cost}));
        json unlinked = json::array();
        for (const UnlinkedBoxLabel& u : labels)
            unlinked.push_back(json{{"detection", u.detection_index},
                                    {"insignificant", u.insignificant},
                                    {"blurry", u.blurry},
                                    {"selected", u.selected}});
        os << json{{"id", ex.id}, {"links", links}, {"unlinked", unlinked}}.dump() << "\n";
        examples_with_links += !est.links.empty();
        total_links += est.links.size();
    }
    if (!os) throw IoError("failed writing " + args.out_path);

    json effective{{"threshold", args.threshold},
                   {"area_ratio", args.area_ratio},
                   {"blur_threshold", args.blur_threshold}};
    RunManifest manifest;
    manifest.command = "mine";
    manifest.config_digest = config_hash(effective);
    manifest.inputs = {args.corpus_dir};
    manifest.outputs = {args.out_path};
    manifest.wall_time_s = timer.seconds();
    save_run_manifest(manifest, args.out_path + ".manifest.json");

    std::cout << "mined " << total_links << " links over " << corpus.examples.size()
              << " examples (" << examples_with_links << " with links)\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string corpus_dir;
    std::string splits_path;
    std::string config_path;
    std::string checkpoint_path;
    std::string log_path;
    int threads = default_threads();
    std::int64_t max_steps = -1;
    double learning_rate = -1.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
};

int run_train(const TrainArgs& args) {
    Timer timer;
    const Corpus corpus = load_corpus(args.corpus_dir);
    const SplitAssignment splits = load_splits(args.splits_path);

    const json cfg_file = read_json_file_or_empty(args.config_path);
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    if (cfg_file.contains("model")) apply_json(model_cfg, cfg_file.at("model"));
    if (cfg_file.contains("train")) apply_json(train_cfg, cfg_file.at("train"));
    if (args.max_steps >= 0) train_cfg.max_steps = args.max_steps;
    if (args.learning_rate > 0) train_cfg.learning_rate = args.learning_rate;
    if (args.seed_set) {
        train_cfg.seed = args.seed;
        model_cfg.seed = args.seed;
    }
    if (model_cfg.d_v == 0) model_cfg.d_v = corpus.header.d_v;
    if (model_cfg.vocab_size == 0) model_cfg.vocab_size = corpus.header.vocab_size;

    const TrainResult result = train_loop(corpus, splits, model_cfg, train_cfg, args.threads,
                                          args.quiet ? nullptr : &std::cout);
    save_checkpoint(args.checkpoint_path, model_cfg, result.best_params);

    if (!args.log_path.empty()) {
        std::ofstream os(args.log_path, std::ios::binary);
        if (!os) throw IoError("cannot write " + args.log_path);
        for (const TrainLogEntry& e : result.log)
            os << json{{"step", e.step},         {"l_intra", e.l_intra},
                       {"l_inter", e.l_inter},   {"l_null", e.l_null},
                       {"total", e.total},       {"val_accuracy", e.val_accuracy},
                       {"best", e.best}}
                      .dump()
               << "\n";
        if (!os) throw IoError("failed writing " + args.log_path);
    }

    json effective{{"model", to_json(model_cfg)}, {"train", to_json(train_cfg)}};
    RunManifest manifest;
    manifest.command = "train";
    manifest.config_digest = config_hash(effective);
    manifest.seed = train_cfg.seed;
    manifest.inputs = {args.corpus_dir, args.splits_path};
    manifest.outputs = {args.checkpoint_path};
    if (!args.log_path.empty()) manifest.outputs.push_back(args.log_path);
    manifest.wall_time_s = timer.seconds();
    save_run_manifest(manifest, args.checkpoint_path + ".manifest.json");

    std::cout << "trained " << train_cfg.max_steps << " steps; best val accuracy "
              << result.best_val_accuracy << " at step " << result.best_step << "\n";
    return 0;
}

// ---- eval / baseline ----

struct EvalArgs {
    std::string corpus_dir;
    std::string splits_path;
    std::string checkpoint_path;
    std::string baseline;
    std::string inference = "argmax";
    std::string subset = "all";
    std::string split = "test";
    std::string report_path;
    std::uint64_t seed = 0;
    int threads = default_threads();
    bool l2r_literal_d = false;
};

Prediction predict_for(const EvalArgs& args, const Parameters* params, const ModelConfig* cfg,
                       const Example& ex, std::size_t index) {
    if (!args.baseline.empty()) {
        if (args.baseline == "random") {
            Rng rng(hash3(args.seed, 0xBA5EULL, index));
            return baseline_random(ex, rng);
        }
        if (args.baseline == "big-small") return baseline_big_small(ex);
        if (args.baseline == "l2r-all") return baseline_l2r(ex, L2RMode::All);
        if (args.baseline == "l2r-largest")
            return baseline_l2r(ex, L2RMode::Largest,
                                args.l2r_literal_d ? L2RCutoff::LiteralMaxNM : L2RCutoff::MinNM);
        throw UsageError("unknown baseline " + args.baseline);
    }
    return model_predict(*params, *cfg, ex, args.inference == "bipartite");
}

int run_eval(const EvalArgs& args) {
    Timer timer;
    if (args.baseline.empty() == args.checkpoint_path.empty())
        throw UsageError("exactly one of --checkpoint or --baseline is required");
    const Corpus corpus = load_corpus(args.corpus_dir);
    const SplitAssignment splits = load_splits(args.splits_path);

    const std::vector<std::string>* ids = &splits.test_ids;
    if (args.split == "val")
        ids = &splits.val_ids;
    else if (args.split == "train")
        ids = &splits.train_ids;
    else if (args.split != "test")
        throw UsageError("unknown split " + args.split);

    std::vector<const Example*> pool = resolve_split(corpus, *ids);
    if (args.subset == "interactive") {
        std::vector<const Example*> filtered;
        for (const Example* ex : pool)
            if (is_interactive(*ex)) filtered.push_back(ex);
        pool = std::move(filtered);
    } else if (args.subset != "all") {
        throw UsageError("unknown subset " + args.subset);
    }

    ModelConfig model_cfg;
    Parameters params;
    if (!args.checkpoint_path.empty()) {
        auto loaded = load_checkpoint(args.checkpoint_path);
        model_cfg = loaded.first;
        params = std::move(loaded.second);
    }

    std::vector<Prediction> predictions(pool.size());
    {
        const int used = std::max(1, args.threads);
        std::exception_ptr first_error;
        std::mutex mu;
        auto worker = [&](int w) {
            try {
                for (std::size_t i = w; i < pool.size(); i += used) {
                    predictions[i] = predict_for(
                        args, args.checkpoint_path.empty() ? nullptr : &params,
                        args.checkpoint_path.empty() ? nullptr : &model_cfg, *pool[i], i);
                    predictions[i].example_id = pool[i]->id;
                }
            } catch (...) {
                std::scoped_lock lk(mu);
                if (!first_error) first_error = std::current_exception();
            }
        };
        if (used == 1) {
            worker(0);
        } else {
            std::vector<std::thread> ts;
            for (int w = 0; w < used; ++w) ts.emplace_back(worker, w);
            for (auto& th : ts) th.join();
        }
        if (first_error) std::rethrow_exception(first_error);
    }

    std::vector<Example> examples;
    examples.reserve(pool.size());
    for (const Example* ex : pool) examples.push_back(*ex);
    const MetricsReport report = evaluate_accuracy(predictions, examples);

    const std::string method = args.baseline.empty() ? "model" : args.baseline;
    const json report_json = report_to_json(report, method, args.inference, args.subset,
                                            args.split);
    save_report(report_json, args.report_path);

    json effective{{"method", method},     {"inference", args.inference},
                   {"subset", args.subset}, {"split", args.split},
                   {"seed", args.seed},     {"l2r_literal_d", args.l2r_literal_d}};
    RunManifest manifest;
    manifest.command = args.baseline.empty() ? "eval" : "baseline";
    manifest.config_digest = config_hash(effective);
    manifest.seed = args.seed;
    manifest.inputs = {args.corpus_dir, args.splits_path};
    if (!args.checkpoint_path.empty()) manifest.inputs.push_back(args.checkpoint_path);
    manifest.outputs = {args.report_path};
    manifest.wall_time_s = timer.seconds();
    save_run_manifest(manifest, args.report_path + ".manifest.json");

    char line[256];
    std::snprintf(line, sizeof(line), "%s %s %s: accuracy %.4f [%.4f, %.4f] over %d links\n",
                  method.c_str(), args.inference.c_str(), args.subset.c_str(), report.accuracy,
                  report.interval.lower, report.interval.upper, report.total_links);
    std::cout << line;
    return 0;
}

// ---- report ----

int run_report(const std::vector<std::string>& runs, const std::string& out_path) {
    std::string text;
    char line[256];
    std::snprintf(line, sizeof(line), "%-14s %-10s %-12s %8s %10s %18s\n", "method",
                  "inference", "subset", "links", "accuracy", "95% interval");
    text += line;
    text += std::string(76, '-') + "\n";
    for (const std::string& path : runs) {
        const json r = load_report(path);
        std::snprintf(line, sizeof(line), "%-14s %-10s %-12s %8d %10.4f [%.4f, %.4f]\n",
                      r.at("method").get<std::string>().c_str(),
                      r.at("inference").get<std::string>().c_str(),
                      r.at("subset").get<std::string>().c_str(),
                      r.at("total_links").get<int>(), r.at("accuracy").get<double>(),
                      r.at("wilson").at("lower").get<double>(),
                      r.at("wilson").at("upper").get<double>());
        text += line;
    }
    std::cout << text;
    if (!out_path.empty()) {
        Timer timer;
        std::ofstream os(out_path, std::ios::binary);
        if (!os) throw IoError("cannot write " + out_path);
        os << text;

        RunManifest manifest;
        manifest.command = "report";
        manifest.config_digest = config_hash(json{{"runs", runs}});
        manifest.inputs = runs;
        manifest.outputs = {out_path};
        manifest.wall_time_s = timer.seconds();
        save_run_manifest(manifest, out_path + ".manifest.json");
    }
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"name-to-detection linking pipeline"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic corpus");
    gen_cmd->add_option("--out-dir", gen.out_dir, "output corpus directory")->required();
    gen_cmd->add_option("--config", gen.config_path, "world config JSON");
    gen_cmd->add_option("--count", gen.count, "number of examples");
    gen_cmd->add_option("--seed", gen.seed, "world seed override")
        ->each([&](const std::string&) { gen.seed_set = true; });
    gen_cmd->add_option("--split-fraction", gen.split_fraction,
                        "fraction of identities held out for val/test");

    MineArgs mine;
    CLI::App* mine_cmd = app.add_subcommand("mine", "estimate links from face embeddings");
    mine_cmd->add_option("--corpus", mine.corpus_dir, "corpus directory")->required();
    mine_cmd->add_option("--threshold", mine.threshold, "max face cost for a link");
    mine_cmd->add_option("--area-ratio", mine.area_ratio, "insignificance ratio");
    mine_cmd->add_option("--blur-threshold", mine.blur_threshold, "Laplacian variance cutoff");
    mine_cmd->add_option("--out", mine.out_path, "output links file")->required();

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train the contextual encoder");
    train_cmd->add_option("--corpus", train.corpus_dir, "corpus directory")->required();
    train_cmd->add_option("--splits", train.splits_path, "splits JSON")->required();
    train_cmd->add_option("--config", train.config_path, "model/train config JSON");
    train_cmd->add_option("--out-checkpoint", train.checkpoint_path, "checkpoint path")
        ->required();
    train_cmd->add_option("--log", train.log_path, "training log (JSONL)");
    train_cmd->add_option("--threads", train.threads, "worker threads");
    train_cmd->add_option("--max-steps", train.max_steps, "override max steps");
    train_cmd->add_option("--lr", train.learning_rate, "override learning rate");
    train_cmd->add_option("--seed", train.seed, "override seed")
        ->each([&](const std::string&) { train.seed_set = true; });
    train_cmd->add_flag("--quiet", train.quiet, "suppress progress lines");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
    eval_cmd->add_option("--corpus", eval.corpus_dir, "corpus directory")->required();
    eval_cmd->add_option("--splits", eval.splits_path, "splits JSON")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "model checkpoint");
    eval_cmd->add_option("--baseline", eval.baseline,
                         "one of random, big-small, l2r-all, l2r-largest");
    eval_cmd->add_option("--inference", eval.inference, "argmax or bipartite");
    eval_cmd->add_option("--subset", eval.subset, "all or interactive");
    eval_cmd->add_option("--split", eval.split, "test, val, or train");
    eval_cmd->add_option("--seed", eval.seed, "seed for the random baseline");
    eval_cmd->add_option("--threads", eval.threads, "worker threads");
    eval_cmd->add_flag("--l2r-literal-d", eval.l2r_literal_d,
                       "use the literal d = max(m, n) cutoff");
    eval_cmd->add_option("--report", eval.report_path, "output report JSON")->required();

    EvalArgs base;
    CLI::App* base_cmd = app.add_subcommand("baseline", "evaluate a heuristic baseline");
    base_cmd->add_option("--corpus", base.corpus_dir, "corpus directory")->required();
    base_cmd->add_option("--splits", base.splits_path, "splits JSON")->required();
    base_cmd->add_option("--method", base.baseline,
                         "one of random, big-small, l2r-all, l2r-largest")
        ->required();
    base_cmd->add_option("--subset", base.subset, "all or interactive");
    base_cmd->add_option("--split", base.split, "test, val, or train");
    base_cmd->add_option("--seed", base.seed, "seed for the random baseline");
    base_cmd->add_option("--threads", base.threads, "worker threads");
    base_cmd->add_flag("--l2r-literal-d", base.l2r_literal_d,
                       "use the literal d = max(m, n) cutoff");
    base_cmd->add_option("--report", base.report_path, "output report JSON")->required();

    std::vector<std::string> run_files;
    std::string report_out;
    CLI::App* report_cmd = app.add_subcommand("report", "compare saved evaluation runs");
    report_cmd->add_option("--runs", run_files, "report JSON files")->required();
    report_cmd->add_option("--out", report_out, "write the table to a file");

    try {
        // CLI11 parses reversed vectors of raw arguments.
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen);
        if (mine_cmd->parsed()) return run_mine(mine);
        if (train_cmd->parsed()) return run_train(train);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (base_cmd->parsed()) {
            base.inference = "heuristic";
            return run_eval(base);
        }
        if (report_cmd->parsed()) return run_report(run_files, report_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

}  // namespace namelink::cli
