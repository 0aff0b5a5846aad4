#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "focusnet/config.hpp"
#include "support.hpp"

#ifndef FOCUSNET_CLI_PATH
#error "FOCUSNET_CLI_PATH must point at the focusnet binary"
#endif

namespace fs = std::filesystem;

namespace {

// Runs the CLI with stdout/stderr captured under `dir`; returns the exit status.
int run(const testing::TempDir& dir, const std::string& args, std::string* out = nullptr) {
    const auto so = dir / "stdout.txt", se = dir / "stderr.txt";
    const std::string cmd = std::string(FOCUSNET_CLI_PATH) + " --workdir " + dir.path.string() +
                            " --config " + (dir / "cfg.json").string() + " " + args + " > " +
                            so.string() + " 2> " + se.string();
    const int rc = std::system(cmd.c_str());
    if (out) *out = testing::slurp(so);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_config(const testing::TempDir& dir) {
    auto cfg = testing::tiny_run(1);
    std::ofstream(dir / "cfg.json") << cfg.to_json().dump(1);
}

}  // namespace

TEST_CASE("cli: argument errors exit 1") {
    testing::TempDir d("cli_usage");
    write_config(d);
    CHECK(run(d, "gen-phantoms --count 0 --out data") == 1);
    CHECK(run(d, "gen-phantoms --out data") == 1);
    CHECK(run(d, "train --stage 7") == 1);
    CHECK(run(d, "frobnicate") == 1);
    CHECK_FALSE(fs::exists(d / "data"));
}

TEST_CASE("cli: unwritable output exits 2 and writes no manifest") {
    testing::TempDir d("cli_io");
    write_config(d);
    std::ofstream(d / "blocker") << "x";
    CHECK(run(d, "gen-phantoms --count 1 --out blocker/data") == 2);
    CHECK_FALSE(fs::exists(d / "blocker" / "data" / "manifest.json"));
}

TEST_CASE("cli: a bad config is a data/contract error") {
    testing::TempDir d("cli_cfg");
    std::ofstream(d / "cfg.json") << R"({"train": {"roi_factr": 3}})";
    CHECK(run(d, "gen-phantoms --count 1") == 3);
}

TEST_CASE("cli: gen-phantoms is deterministic") {
    testing::TempDir d("cli_gen");
    write_config(d);
    std::string out;
    REQUIRE(run(d, "gen-phantoms --count 2 --out a -q", &out) == 0);
    CHECK(out.find("manifest.json") != std::string::npos);
    REQUIRE(run(d, "gen-phantoms --count 2 --out b -q") == 0);
    for (const auto* f : {"manifest.json", "case_000_image.raw", "case_001_labels.raw"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(d / "a" / f));
        CHECK(testing::slurp(d / "a" / f) == testing::slurp(d / "b" / f));
    }
}

TEST_CASE("cli: train, evaluate, report and predict end to end") {
    testing::TempDir d("cli_e2e");
    write_config(d);
    REQUIRE(run(d, "gen-phantoms --count 5 --out data -q") == 0);

    // stage 3 without a stage-2 checkpoint
    CHECK(run(d, "train --stage 3") == 3);
    CHECK(testing::slurp(d / "stderr.txt").find("stage2") != std::string::npos);

    REQUIRE(run(d, "train --stage 1 -q") == 0);
    CHECK(run(d, "train --stage 3") == 3);
    REQUIRE(run(d, "train --stage 2 -q") == 0);
    REQUIRE(run(d, "train --stage 3 -q") == 0);
    REQUIRE(run(d, "train --stage 4 -q") == 0);
    CHECK(run(d, "train --stage 2 --resume checkpoints/stage3.ckpt") == 3);

    REQUIRE(run(d, "evaluate --ckpt checkpoints/stage4.ckpt --split all --report rep -q") == 0);
    CHECK(fs::exists(d / "rep" / "cases.csv"));
    CHECK(fs::exists(d / "rep" / "aggregate.csv"));

    REQUIRE(run(d, "report --report rep --plots plots1 --log checkpoints/train_log.jsonl -q") == 0);
    CHECK(fs::exists(d / "plots1" / "dsc.svg"));
    CHECK(fs::exists(d / "plots1" / "hd95.svg"));
    CHECK(fs::exists(d / "plots1" / "loss.svg"));
    REQUIRE(run(d, "report --report rep --plots plots2 --log checkpoints/train_log.jsonl -q") == 0);
    for (const auto* f : {"dsc.svg", "hd95.svg", "loss.svg"})
        CHECK(testing::slurp(d / "plots1" / f) == testing::slurp(d / "plots2" / f));

    // an empty report is an error and writes nothing
    fs::create_directories(d / "empty");
    {
        std::ofstream(d / "empty" / "aggregate.csv")
            << testing::slurp(d / "rep" / "aggregate.csv").substr(
                   0, testing::slurp(d / "rep" / "aggregate.csv").find('\n') + 1);
    }
    CHECK(run(d, "report --report empty --plots plots3") != 0);
    CHECK((!fs::exists(d / "plots3") || fs::is_empty(d / "plots3")));

    REQUIRE(run(d, "evaluate --compare checkpoints/stage1.ckpt checkpoints/stage4.ckpt --split validation "
                   "--report cmp -q") == 0);
    const auto table = testing::slurp(d / "cmp" / "comparison.csv");
    CHECK(table.find("organ,id,is_small,dsc_a,dsc_b,dsc_delta") != std::string::npos);
    CHECK(table.find("small_mean") != std::string::npos);

    REQUIRE(run(d, "predict --ckpt checkpoints/stage4.ckpt --input data/case_000_image.hdr --out pred/labels -q") ==
            0);
    CHECK(fs::exists(d / "pred" / "labels.hdr"));
    CHECK(run(d, "predict --ckpt checkpoints/stage4.ckpt --input data/nothing.hdr --out pred/x") == 2);
}
