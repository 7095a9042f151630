// End-to-end smoke test for the command-line tool. argv[1] is the binary.
// Drives every subcommand at micro scale in a temp directory and checks
// exit codes, artifacts, and report accumulation. Exits nonzero on failure.
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

static std::string g_bin;
static int g_failures = 0;

static void expect(bool ok, const std::string& what) {
    std::printf("%s: %s\n", ok ? "ok" : "FAIL", what.c_str());
    std::fflush(stdout);
    if (!ok) g_failures++;
}

static nlohmann::json parse_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f.good()) return nlohmann::json();
    return nlohmann::json::parse(f, nullptr, /*allow_exceptions=*/false);
}

static int run(const std::string& args) {
    std::string cmd = g_bin + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

static void expect_exit(int want, const std::string& args) {
    int got = run(args);
    expect(got == want,
           "exit " + std::to_string(want) + " (got " + std::to_string(got) + "): " + args);
}

static void expect_file(const fs::path& p) { expect(fs::exists(p), "exists: " + p.string()); }

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: cli_smoke <conmax-binary>\n");
        return 2;
    }
    g_bin = argv[1];

    fs::path dir = fs::temp_directory_path() / "conmax_cli_smoke";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string out = (dir / "out").string();

    std::string cfg = (dir / "config.json").string();
    {
        std::ofstream f(cfg);
        f << R"({"group_size": 4, "batch_queries": 2, "max_compressed_len": 16})" << "\n";
    }
    std::string grid = (dir / "grid.json").string();
    {
        std::ofstream f(grid);
        f << R"({"steps": 1, "cells": [)"
          << R"({"name": "beta0.0", "overrides": {"beta": 0.0}},)"
          << R"({"name": "marginal", "overrides": {"reward_mode": "marginal"}}]})" << "\n";
    }

    // help and usage errors never touch the filesystem
    expect_exit(0, "--help");
    expect_exit(1, "gen-data --bogus-flag 3");
    expect_exit(1, "sft");  // missing required --data
    expect_exit(2, "compress --policy " + (dir / "nope.ckpt").string() + " --data " +
                       (dir / "nope.jsonl").string() + " --out " + out);

    std::string common = " --out " + out + " --seed 42 --workers 1";

    expect_exit(0, "gen-data --n 20 --difficulty-min 2 --difficulty-max 3" + common);
    expect_file(fs::path(out) / "dataset.jsonl");

    std::string data = (fs::path(out) / "dataset.jsonl").string();
    expect_exit(0, "train-teacher --data " + data +
                       " --steps 25 --batch 8 --lr 3e-3"
                       " --d-model 32 --layers 1 --heads 2 --max-len 192" +
                       common);
    expect_file(fs::path(out) / "teacher.ckpt");
    expect_file(fs::path(out) / "teacher_log.jsonl");

    std::string teacher = (fs::path(out) / "teacher.ckpt").string();
    expect_exit(0, "train-policy --config " + cfg + " --data " + data + " --teacher " + teacher +
                       " --rl-fraction 0.4 --steps 2 --warmup-steps 8 --warmup-batch 8"
                       " --checkpoint-every 0" +
                       common);
    expect_file(fs::path(out) / "policy.ckpt");
    expect_file(fs::path(out) / "d_sft.jsonl");
    expect_file(fs::path(out) / "d_rl.jsonl");
    expect_file(fs::path(out) / "train_log.jsonl");

    std::string policy = (fs::path(out) / "policy.ckpt").string();
    std::string d_sft = (fs::path(out) / "d_sft.jsonl").string();
    expect_exit(0, "compress --config " + cfg + " --policy " + policy + " --data " + d_sft + common);
    expect_file(fs::path(out) / "compressed.jsonl");

    std::string compressed = (fs::path(out) / "compressed.jsonl").string();
    expect_exit(0, "regen --teacher " + teacher + " --data " + compressed + " --max-new 8" + common);
    expect_file(fs::path(out) / "regen.jsonl");

    expect_exit(0, "sft --data " + d_sft +
                       " --epochs 1 --batch 8"
                       " --d-model 16 --layers 1 --heads 2 --max-len 192" +
                       common);
    expect_file(fs::path(out) / "student.ckpt");

    std::string student = (fs::path(out) / "student.ckpt").string();
    expect_exit(0, "eval --student " + student +
                       " --n 4 --runs 1 --temperature 0 --max-new 24 --exclude " + data + common);
    expect_file(fs::path(out) / "eval.json");
    expect_file(fs::path(out) / "eval_records.jsonl");

    expect_exit(0, "report --in " + (fs::path(out) / "eval.json").string() + " --format csv");
    expect_file(fs::path(out) / "eval.csv");

    expect_exit(0, "ablate --config " + cfg + " --grid " + grid + " --data " + data +
                       " --teacher " + teacher +
                       " --steps 1 --warmup-steps 4 --compress-n 4" + common);
    expect_file(fs::path(out) / "ablation.csv");

    // every stage landed its own section in the shared report
    {
        nlohmann::json rep = parse_file(fs::path(out) / "report.json");
        expect(rep.is_object(), "report.json parses");
        for (const char* key : {"gen_data", "train_teacher", "train_policy", "compress", "regen",
                                "sft_student.ckpt", "ablate"})
            expect(rep.contains(key), std::string("report section ") + key);
        expect(rep.contains("gen_data") && rep["gen_data"].contains("config"),
               "sections carry the config echo");
    }

    // eval report parses and carries the headline numbers
    {
        nlohmann::json ev = parse_file(fs::path(out) / "eval.json");
        expect(ev.is_object() && ev.contains("accuracy") && ev.contains("mean_tokens") &&
                   ev.contains("acc_at_budget"),
               "eval.json headline fields");
    }

    if (g_failures == 0) fs::remove_all(dir);
    std::printf("%s (%d failure%s)\n", g_failures ? "SMOKE FAIL" : "SMOKE PASS", g_failures,
                g_failures == 1 ? "" : "s");
    return g_failures ? 1 : 0;
}
