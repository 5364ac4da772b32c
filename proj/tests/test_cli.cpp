#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "namelink/cli.hpp"
#include "test_util.hpp"

using namelink::cli::dispatch;
using nlohmann::json;
using testutil::TempDir;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("help and usage errors map to the documented exit codes") {
    CHECK(dispatch({"--help"}) == 0);
    CHECK(dispatch({"gen", "--help"}) == 0);
    CHECK(dispatch({"frobnicate"}) == 2);
    CHECK(dispatch({"gen", "--no-such-flag"}) == 2);
    CHECK(dispatch({"eval", "--corpus", "x"}) == 2);  // missing required flags
}

TEST_CASE("domain failures exit with code 1") {
    TempDir dir("cli_err");
    CHECK(dispatch({"mine", "--corpus", (dir.path() / "nope").string(), "--out",
                    (dir.path() / "links.jsonl").string()}) == 1);
}

TEST_CASE("tiny gen-mine-train-eval-report pipeline completes") {
    TempDir dir("cli_pipe");
    const auto corpus_dir = dir.path() / "corpus";
    const auto world_cfg = dir.path() / "world.json";
    const auto train_cfg = dir.path() / "train.json";

    write_file(world_cfg, json{{"n_identities", 50},
                               {"d_v", 12},
                               {"d_f", 24},
                               {"seed", 2024}}
                              .dump());
    write_file(train_cfg,
               json{{"model", json{{"d_model", 16}, {"n_layers", 1}, {"n_heads", 2},
                                   {"d_ff", 32}, {"seed", 2024}}},
                    {"train", json{{"max_steps", 30},
                                   {"validate_every", 15},
                                   {"batch_size", 8},
                                   {"learning_rate", 1e-3},
                                   {"seed", 2024}}}}
                   .dump());

    CHECK(dispatch({"gen", "--out-dir", corpus_dir.string(), "--config", world_cfg.string(),
                    "--count", "250", "--split-fraction", "0.15"}) == 0);
    CHECK(std::filesystem::exists(corpus_dir / "manifest.json"));
    CHECK(std::filesystem::exists(corpus_dir / "records.jsonl"));
    CHECK(std::filesystem::exists(corpus_dir / "features.bin"));
    CHECK(std::filesystem::exists(corpus_dir / "oracle.jsonl"));
    CHECK(std::filesystem::exists(corpus_dir / "splits.json"));
    CHECK(std::filesystem::exists(corpus_dir / "run_manifest.json"));

    const auto links = dir.path() / "links.jsonl";
    CHECK(dispatch({"mine", "--corpus", corpus_dir.string(), "--out", links.string()}) == 0);
    CHECK(std::filesystem::exists(links));
    CHECK(std::filesystem::exists(dir.path() / "links.jsonl.manifest.json"));

    const auto ckpt = dir.path() / "model.ckpt";
    const auto log = dir.path() / "train_log.jsonl";
    CHECK(dispatch({"train", "--corpus", corpus_dir.string(), "--splits",
                    (corpus_dir / "splits.json").string(), "--config", train_cfg.string(),
                    "--out-checkpoint", ckpt.string(), "--log", log.string(), "--threads", "2",
                    "--quiet"}) == 0);
    CHECK(std::filesystem::exists(ckpt));
    // Two validation points at steps 15 and 30.
    {
        std::ifstream is(log);
        std::string line;
        int lines = 0;
        while (std::getline(is, line))
            if (!line.empty()) ++lines;
        CHECK(lines == 2);
    }

    const auto model_report = dir.path() / "model_report.json";
    CHECK(dispatch({"eval", "--corpus", corpus_dir.string(), "--splits",
                    (corpus_dir / "splits.json").string(), "--checkpoint", ckpt.string(),
                    "--inference", "argmax", "--report", model_report.string(), "--threads",
                    "2"}) == 0);
    const json mr = json::parse(slurp(model_report));
    CHECK(mr.at("method") == "model");
    CHECK(mr.at("total_links").get<int>() > 0);
    CHECK(mr.at("accuracy").get<double>() >= 0.0);

    const auto rand_report = dir.path() / "random_report.json";
    CHECK(dispatch({"baseline", "--corpus", corpus_dir.string(), "--splits",
                    (corpus_dir / "splits.json").string(), "--method", "random", "--seed", "3",
                    "--report", rand_report.string()}) == 0);

    const auto l2r_report = dir.path() / "l2r_report.json";
    CHECK(dispatch({"eval", "--corpus", corpus_dir.string(), "--splits",
                    (corpus_dir / "splits.json").string(), "--baseline", "l2r-largest",
                    "--subset", "interactive", "--report", l2r_report.string()}) == 0);
    CHECK(json::parse(slurp(l2r_report)).at("subset") == "interactive");

    const auto table = dir.path() / "table.txt";
    CHECK(dispatch({"report", "--runs", model_report.string(), rand_report.string(),
                    l2r_report.string(), "--out", table.string()}) == 0);
    const std::string text = slurp(table);
    CHECK(text.find("model") != std::string::npos);
    CHECK(text.find("random") != std::string::npos);

    // Exactly one of --checkpoint / --baseline must be given.
    CHECK(dispatch({"eval", "--corpus", corpus_dir.string(), "--splits",
                    (corpus_dir / "splits.json").string(), "--report",
                    (dir.path() / "bad.json").string()}) == 1);
}

TEST_CASE("gen output is byte-identical for a fixed seed") {
    TempDir a("cli_det_a");
    TempDir b("cli_det_b");
    for (const TempDir* d : {&a, &b})
        CHECK(dispatch({"gen", "--out-dir", (d->path() / "c").string(), "--count", "60",
                        "--seed", "99", "--split-fraction", "0.2"}) == 0);
    for (const char* name :
         {"manifest.json", "records.jsonl", "features.bin", "oracle.jsonl", "splits.json"})
        CHECK(slurp(a.path() / "c" / name) == slurp(b.path() / "c" / name));
}
