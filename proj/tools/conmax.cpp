// conmax: reward-driven compression of verbose reasoning traces on a toy
// arithmetic corpus. Subcommands mirror the pipeline stages; every stage is
// deterministic given (config, seed) in single-worker mode.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "conmax/data.hpp"
#include "conmax/eval.hpp"
#include "conmax/grpo.hpp"
#include "conmax/log.hpp"
#include "conmax/model.hpp"
#include "conmax/pipeline.hpp"
#include "conmax/rewards.hpp"
#include "conmax/serve.hpp"
#include "conmax/teacher.hpp"
#include "conmax/toycorpus.hpp"
#include "conmax/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace conmax;

namespace {

constexpr uint64_t kWarmupTag = 0x7761726dull;
constexpr uint64_t kTeacherTag = 0x74656163ull;
constexpr uint64_t kEvalGenTag = 0x65717279ull;

struct Common {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
    cmd->add_option("--config", c.config_path, "run config JSON");
    cmd->add_option("--seed", c.seed, "seed override")->each([&](const std::string&) {
        c.seed_set = true;
    });
    cmd->add_option("--workers", c.workers, "worker threads (default: CPU count)");
    if (with_out) cmd->add_option("--out", c.out_dir, "output directory");
}

RunConfig load_config(const Common& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) cfg = load_run_config(c.config_path);
    if (c.seed_set) cfg.seed = c.seed;  // --seed overrides the config seed
    return cfg;
}

int effective_workers(const Common& c) {
    if (c.workers > 0) return c.workers;
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? (int)hc : 1;
}

void ensure_out(const Common& c) { fs::create_directories(c.out_dir); }

// Each stage writes its section into <out>/report.json, preserving sections
// written by earlier stages into the same directory.
void write_report_section(const std::string& out_dir, const std::string& stage,
                          const ordered_json& section) {
    fs::path path = fs::path(out_dir) / "report.json";
    ordered_json j = ordered_json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        try {
            in >> j;
        } catch (...) {
            j = ordered_json::object();
        }
        if (!j.is_object()) j = ordered_json::object();
    }
    j[stage] = section;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

ordered_json config_echo(const RunConfig& cfg) {
    return ordered_json::parse(run_config_to_json_text(cfg));
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw std::runtime_error("missing " + what + ": " + path);
}

Teacher make_teacher(const std::string& ckpt, const std::string& url, const Vocab& v) {
    if (!url.empty()) {
        RemoteConfig rc;
        auto pos = url.rfind(':');
        if (pos == std::string::npos)
            throw std::runtime_error("teacher url must be host:port, got " + url);
        rc.host = url.substr(0, pos);
        rc.port = std::stoi(url.substr(pos + 1));
        return Teacher::remote(rc, v);
    }
    require_file(ckpt, "teacher checkpoint");
    return Teacher::local(load_model(ckpt), v);
}

std::string basename_of(const std::string& path) { return fs::path(path).filename().string(); }

// --- gen-data ---

struct GenCli {
    Common common;
    GenParams gp;
    std::string mode = "synthetic";
    std::string teacher_ckpt, teacher_url;
};

int run_gen_data(GenCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    GenStats st;
    std::vector<Sample> data;
    if (a.mode == "synthetic") {
        data = build_dataset_synthetic(a.gp, cfg.seed, v, &st);
    } else if (a.mode == "teacher") {
        Teacher teacher = make_teacher(a.teacher_ckpt, a.teacher_url, v);
        data = build_dataset_teacher(teacher, a.gp, cfg.seed, v, workers, &st);
    } else {
        throw CLI::ValidationError("--mode must be synthetic or teacher");
    }
    std::string out_path = (fs::path(a.common.out_dir) / "dataset.jsonl").string();
    save_dataset(data, out_path, v);

    ordered_json sec;
    sec["mode"] = a.mode;
    sec["seed"] = cfg.seed;
    sec["requested"] = st.requested;
    sec["kept"] = st.kept;
    sec["dropped"] = st.dropped;
    ordered_json per_diff = ordered_json::object();
    for (auto [d, attempted] : st.attempted_per_difficulty) {
        size_t kept = st.kept_per_difficulty.count(d) ? st.kept_per_difficulty.at(d) : 0;
        ordered_json row;
        row["attempted"] = attempted;
        row["kept"] = kept;
        row["retained_fraction"] = attempted ? (double)kept / (double)attempted : 0.0;
        per_diff[std::to_string(d)] = row;
    }
    sec["per_difficulty"] = per_diff;
    sec["mean_trace_len"] = st.mean_trace_len;
    sec["mean_minimal_len"] = st.mean_minimal_len;
    sec["mean_inflation"] = st.mean_inflation;
    sec["config"] = config_echo(cfg);
    write_report_section(a.common.out_dir, "gen_data", sec);
    std::printf("gen-data: %zu samples -> %s (mean inflation %.2fx)\n", data.size(),
                out_path.c_str(), st.mean_inflation);
    return 0;
}

// --- train-teacher ---

struct TrainTeacherCli {
    Common common;
    std::string data_path;
    long steps = 5000;
    int batch = 16;
    double lr = 1e-3;
    double minimal_mix = 0.5;
    ModelConfig mc;
};

int run_train_teacher(TrainTeacherCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    require_file(a.data_path, "dataset");
    std::vector<Sample> data = load_dataset(a.data_path, v);
    if (data.empty()) throw std::runtime_error("dataset is empty: " + a.data_path);

    a.mc.vocab_size = v.size();
    Model teacher(a.mc);
    {
        Rng rng(mix_seed(cfg.seed, kTeacherTag, 0));
        init_weights(teacher, rng);
    }
    Adam opt(teacher.p.size(), a.lr);

    std::ofstream tlog(fs::path(a.common.out_dir) / "teacher_log.jsonl");
    std::vector<size_t> order(data.size());
    size_t cursor = order.size();
    uint64_t epoch = 0;
    double last_loss = 0.0;
    for (long step = 1; step <= a.steps; step++) {
        std::vector<SeqPair> batch;
        batch.reserve(a.batch);
        Rng flip(mix_seed(cfg.seed, kTeacherTag, 1, (uint64_t)step));
        for (int b = 0; b < a.batch; b++) {
            if (cursor >= order.size()) {
                for (size_t i = 0; i < order.size(); i++) order[i] = i;
                Rng sh(mix_seed(cfg.seed, kTeacherTag, 2, epoch));
                sh.shuffle(order);
                cursor = 0;
                epoch++;
            }
            const Sample& s = data[order[cursor++]];
            SeqPair sp;
            sp.ctx = s.query;
            // a slice of the batch trains on the minimal form of the same
            // query, so short traces stay in-distribution for the teacher
            if (flip.bernoulli(a.minimal_mix)) {
                ToyQuery q = parse_query(s.query, v);
                sp.tgt = minimal_trace(q, v);
            } else {
                sp.tgt = s.trace;
            }
            sp.tgt.insert(sp.tgt.end(), s.answer.begin(), s.answer.end());
            batch.push_back(std::move(sp));
        }
        opt.lr = a.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * (double)(step - 1) /
                                              (double)a.steps));
        last_loss = xent_step(teacher, opt, batch, workers);
        ordered_json rec;
        rec["step"] = step;
        rec["loss"] = last_loss;
        tlog << rec.dump() << '\n';
        if (step % 100 == 0) log_info("teacher step %ld loss %.4f", step, last_loss);
    }
    std::string ckpt = (fs::path(a.common.out_dir) / "teacher.ckpt").string();
    save_model(teacher, ckpt);

    ordered_json sec;
    sec["data"] = a.data_path;
    sec["steps"] = a.steps;
    sec["batch"] = a.batch;
    sec["lr"] = a.lr;
    sec["minimal_mix"] = a.minimal_mix;
    sec["final_loss"] = last_loss;
    sec["d_model"] = a.mc.d_model;
    sec["n_layers"] = a.mc.n_layers;
    sec["n_heads"] = a.mc.n_heads;
    sec["seed"] = cfg.seed;
    sec["config"] = config_echo(cfg);
    write_report_section(a.common.out_dir, "train_teacher", sec);
    std::printf("train-teacher: %ld steps, final loss %.4f -> %s\n", a.steps, last_loss,
                ckpt.c_str());
    return 0;
}

// --- train-policy ---

struct TrainPolicyCli {
    Common common;
    std::string data_path, teacher_ckpt, teacher_url, init_ckpt;
    double rl_fraction = 0.42;
    long steps = 100;
    long warmup_steps = 300;
    int warmup_batch = 16;
    double warmup_lr = 1e-3;
    double warmup_pow = 1.5;
    long checkpoint_every = 50;
    bool marginal_answer_first = false;
    RedundancyParams warmup_redundancy;  // scaled per-sample during warmup
};

// Behavior-cloning warmup: teach the freshly initialized policy to rewrite
// the verbose trace as a thinner valid trace ending in <end_think>. Targets
// are redundancy injections of the minimal trace with per-sample scaled
// probabilities, so the policy starts out spanning compression ratios.
void warmup_policy(Model& policy, const std::vector<Sample>& d_rl, const TrainPolicyCli& a,
                   const RunConfig& cfg, const Vocab& v, int workers) {
    if (a.warmup_steps <= 0) return;
    Adam opt(policy.p.size(), a.warmup_lr);
    std::vector<size_t> order(d_rl.size());
    size_t cursor = order.size();
    uint64_t epoch = 0;
    for (long step = 1; step <= a.warmup_steps; step++) {
        std::vector<SeqPair> batch;
        batch.reserve(a.warmup_batch);
        for (int b = 0; b < a.warmup_batch; b++) {
            if (cursor >= order.size()) {
                for (size_t i = 0; i < order.size(); i++) order[i] = i;
                Rng sh(mix_seed(cfg.seed, kWarmupTag, 0, epoch));
                sh.shuffle(order);
                cursor = 0;
                epoch++;
            }
            const Sample& s = d_rl[order[cursor++]];
            Rng rng(mix_seed(cfg.seed, kWarmupTag, 1, (uint64_t)step, (uint64_t)b));
            double u = std::pow(rng.uniform(), a.warmup_pow);
            RedundancyParams rp = a.warmup_redundancy;
            rp.dup_step_prob *= u;
            rp.filler_run_prob *= u;
            rp.restate_query_prob *= u;
            ToyQuery q = parse_query(s.query, v);
            SeqPair sp;
            sp.ctx.push_back(v.compress);
            sp.ctx.insert(sp.ctx.end(), s.query.begin(), s.query.end());
            sp.ctx.insert(sp.ctx.end(), s.trace.begin(), s.trace.end());
            sp.tgt = inject_redundancy(minimal_trace(q, v), rp, rng, v);
            batch.push_back(std::move(sp));
        }
        double loss = xent_step(policy, opt, batch, workers);
        if (step % 100 == 0) log_info("warmup step %ld loss %.4f", step, loss);
    }
}

int run_train_policy(TrainPolicyCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    require_file(a.data_path, "dataset");
    std::vector<Sample> data = load_dataset(a.data_path, v);

    DatasetSplit split = partition(data, a.rl_fraction, cfg.seed);
    save_dataset(split.d_sft, (fs::path(a.common.out_dir) / "d_sft.jsonl").string(), v);
    save_dataset(split.d_rl, (fs::path(a.common.out_dir) / "d_rl.jsonl").string(), v);

    Teacher teacher = make_teacher(a.teacher_ckpt, a.teacher_url, v);
    std::string init = a.init_ckpt.empty() ? a.teacher_ckpt : a.init_ckpt;
    if (init.empty())
        throw std::runtime_error("train-policy needs --init or a local --teacher checkpoint");
    require_file(init, "policy init checkpoint");
    Model policy = load_model(init);

    warmup_policy(policy, split.d_rl, a, cfg, v, workers);

    TrainOptions topts;
    topts.steps = a.steps;
    topts.out_dir = a.common.out_dir;
    topts.workers = workers;
    topts.checkpoint_every = a.checkpoint_every;
    topts.marginal_answer_first = a.marginal_answer_first;
    TrainResult tr = train(policy, teacher, split.d_rl, cfg, topts, v);

    std::string ckpt = (fs::path(a.common.out_dir) / "policy.ckpt").string();
    save_model(policy, ckpt);

    ordered_json sec;
    sec["data"] = a.data_path;
    sec["n_samples"] = data.size();
    sec["n_rl"] = split.d_rl.size();
    sec["n_sft"] = split.d_sft.size();
    sec["rl_fraction"] = a.rl_fraction;
    sec["steps"] = a.steps;
    sec["warmup_steps"] = a.warmup_steps;
    sec["skipped_samples"] = tr.skipped_samples;
    if (!tr.records.empty()) {
        const TrainLogRecord& last = tr.records.back();
        sec["final_mean_reward"] = last.mean_reward;
        sec["final_mean_compressed_len"] = last.mean_compressed_len;
        sec["final_mean_compression"] = last.mean_compression;
    }
    sec["seed"] = cfg.seed;
    sec["config"] = config_echo(cfg);
    write_report_section(a.common.out_dir, "train_policy", sec);
    double final_comp = tr.records.empty() ? 0.0 : tr.records.back().mean_compression;
    std::printf("train-policy: %ld steps on %zu RL samples -> %s (final compression %.3f)\n",
                a.steps, split.d_rl.size(), ckpt.c_str(), final_comp);
    return 0;
}

// --- compress ---

struct CompressCli {
    Common common;
    std::string policy_ckpt, data_path;
};

int run_compress(CompressCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    require_file(a.policy_ckpt, "policy checkpoint");
    require_file(a.data_path, "dataset");
    Model policy = load_model(a.policy_ckpt);
    std::vector<Sample> data = load_dataset(a.data_path, v);
    DecodeParams dp;
    dp.temperature = 0.0;
    dp.max_new = cfg.max_compressed_len;
    CompressStats st;
    std::vector<CompressedSample> out = compress_dataset(policy, data, dp, v, workers, &st);
    std::string out_path = (fs::path(a.common.out_dir) / "compressed.jsonl").string();
    save_compressed(out, out_path, v);

    ordered_json sec;
    sec["data"] = a.data_path;
    sec["policy"] = a.policy_ckpt;
    sec["n"] = st.n;
    sec["flagged"] = st.flagged;
    sec["terminated"] = st.terminated;
    sec["mean_source_len"] = st.mean_source_len;
    sec["mean_compressed_len"] = st.mean_compressed_len;
    sec["mean_ratio"] = st.mean_ratio;
    sec["seed"] = cfg.seed;
    sec["config"] = config_echo(cfg);
    write_report_section(a.common.out_dir, "compress", sec);
    std::printf("compress: %zu samples, mean |zhat|/|z| %.3f (%zu flagged) -> %s\n", st.n,
                st.mean_ratio, st.flagged, out_path.c_str());
    return 0;
}

// --- regen ---

struct RegenCli {
    Common common;
    std::string teacher_ckpt, teacher_url, data_path;
    double temperature = 0.0;
    int max_new = 8;
};

int run_regen(RegenCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    require_file(a.data_path, "compressed dataset");
    Teacher teacher = make_teacher(a.teacher_ckpt, a.teacher_url, v);
    std::vector<CompressedSample> in = load_compressed(a.data_path, v);
    DecodeParams dp{a.temperature, a.max_new};
    RegenStats st;
    std::vector<Sample> out = regenerate(teacher, in, dp, cfg.seed, v, workers, &st);
    std::string out_path = (fs::path(a.common.out_dir) / "regen.jsonl").string();
    save_dataset(out, out_path, v);

    ordered_json sec;
    sec["data"] = a.data_path;
    sec["in"] = st.in;
    sec["kept"] = st.kept;
    sec["dropped"] = st.dropped;
    sec["skipped_flagged"] = st.skipped_flagged;
    sec["retention"] = st.retention;
    sec["seed"] = cfg.seed;
    sec["config"] = config_echo(cfg);
    write_report_section(a.common.out_dir, "regen", sec);
    std::printf("regen: kept %zu of %zu (retention %.3f) -> %s\n", st.kept, st.in, st.retention,
                out_path.c_str());
    return 0;
}

// --- sft ---

struct SftCli {
    Common common;
    std::string data_path, init_ckpt;
    SftOptions opts;
    ModelConfig mc;
    std::string out_name = "student.ckpt";
};

int run_sft(SftCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    a.opts.workers = effective_workers(a.common);
    a.opts.seed = cfg.seed;
    require_file(a.data_path, "dataset");
    std::vector<Sample> data = load_dataset(a.data_path, v);

    Model student;
    if (a.init_ckpt.empty()) {
        a.mc.vocab_size = v.size();
        student = Model(a.mc);
        Rng rng(mix_seed(cfg.seed, kTeacherTag, 3));
        init_weights(student, rng);
    } else {
        require_file(a.init_ckpt, "init checkpoint");
        student = load_model(a.init_ckpt);
    }
    SftResult res = sft(student, data, a.opts, v);
    std::string ckpt = (fs::path(a.common.out_dir) / a.out_name).string();
    save_model(student, ckpt);

    ordered_json sec;
    sec["data"] = a.data_path;
    sec["n_samples"] = data.size();
    sec["epochs"] = a.opts.epochs;
    sec["lr"] = a.opts.lr;
    sec["batch"] = a.opts.batch;
    sec["epoch_losses"] = res.epoch_losses;
    sec["seed"] = cfg.seed;
    sec["config"] = config_echo(cfg);
    write_report_section(a.common.out_dir, "sft_" + a.out_name, sec);
    std::printf("sft: %d epochs on %zu samples, final loss %.4f -> %s\n", a.opts.epochs,
                data.size(), res.epoch_losses.back(), ckpt.c_str());
    return 0;
}

// --- eval ---

struct EvalCli {
    Common common;
    std::string student_ckpt;
    size_t n = 500;
    int runs = 5;
    std::vector<int> budgets{32, 64, 96};
    double temperature = 0.6;
    int max_new = 96;
    int bin_width = 8;
    std::vector<std::string> exclude;
    std::string baseline_path;
    int difficulty_min = 2, difficulty_max = 3;
    QueryGenParams qgen;
    std::string report_name = "eval.json";
};

// Fresh queries whose token strings appear in none of the excluded datasets.
std::vector<ToyQuery> heldout_queries(const EvalCli& a, uint64_t seed, const Vocab& v) {
    std::set<std::string> taken;
    for (const auto& path : a.exclude) {
        require_file(path, "exclude dataset");
        for (const auto& s : load_dataset(path, v)) taken.insert(v.decode_text(s.query));
    }
    std::vector<ToyQuery> out;
    int span = a.difficulty_max - a.difficulty_min + 1;
    for (uint64_t j = 0; out.size() < a.n; j++) {
        if (j > 100 * a.n + 1000)
            throw std::runtime_error("cannot find enough held-out queries; relax --exclude");
        Rng rng(mix_seed(seed, kEvalGenTag, j));
        int difficulty = a.difficulty_min + (int)rng.below((uint64_t)span);
        ToyQuery q = gen_query(rng, difficulty, a.qgen);
        std::string key = v.decode_text(query_tokens(q, v));
        if (taken.count(key)) continue;
        taken.insert(key);  // also dedup within the eval set
        out.push_back(q);
    }
    return out;
}

int run_eval(EvalCli& a) {
    RunConfig cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    require_file(a.student_ckpt, "student checkpoint");
    Model student = load_model(a.student_ckpt);
    std::vector<ToyQuery> queries = heldout_queries(a, cfg.seed, v);
    DecodeParams dp{a.temperature, a.max_new};
    std::vector<EvalRecord> raw;
    EvalReport rep =
        evaluate(student, queries, dp, a.budgets, a.runs, cfg.seed, v, workers, a.bin_width, &raw);
    if (!a.baseline_path.empty()) {
        EvalReport base = load_report_json(a.baseline_path);
        rep.has_compression_rate = true;
        rep.compression_rate = compression_rate(base.mean_tokens, rep.mean_tokens);
        rep.baseline = basename_of(a.baseline_path);
    }
    std::string rep_path = (fs::path(a.common.out_dir) / a.report_name).string();
    emit_report_json(rep, rep_path);
    std::string rec_path =
        (fs::path(a.common.out_dir) / (fs::path(a.report_name).stem().string() + "_records.jsonl"))
            .string();
    save_eval_records(raw, rec_path);
    std::printf("eval: accuracy %.3f, mean tokens %.1f over %zu queries x %d runs -> %s\n",
                rep.accuracy, rep.mean_tokens, queries.size(), a.runs, rep_path.c_str());
    return 0;
}

// --- report ---

struct ReportCli {
    std::string in_path, format = "csv", out_path;
};

int run_report(ReportCli& a) {
    require_file(a.in_path, "report");
    EvalReport rep = load_report_json(a.in_path);
    if (a.out_path.empty()) {
        fs::path p(a.in_path);
        a.out_path = (p.parent_path() / (p.stem().string() + "." + a.format)).string();
    }
    if (a.format == "csv") {
        emit_report_csv(rep, a.out_path);
    } else if (a.format == "json") {
        emit_report_json(rep, a.out_path);
    } else {
        throw CLI::ValidationError("--format must be json or csv");
    }
    std::printf("report: %s -> %s\n", a.in_path.c_str(), a.out_path.c_str());
    return 0;
}

// --- serve-teacher ---

struct ServeCli {
    std::string teacher_ckpt;
    std::string host = "127.0.0.1";
    int port = 8791;
};

int run_serve(ServeCli& a) {
    require_file(a.teacher_ckpt, "teacher checkpoint");
    const Vocab& v = Vocab::toy();
    TeacherServer server(load_model(a.teacher_ckpt), v);
    std::printf("serve-teacher: %s on %s:%d\n", a.teacher_ckpt.c_str(), a.host.c_str(), a.port);
    std::fflush(stdout);
    server.run(a.host, a.port);
    return 0;
}

// --- ablate ---

struct AblateCli {
    Common common;
    std::string grid_path, data_path, teacher_ckpt, teacher_url, init_ckpt;
    double rl_fraction = 0.42;
    long steps = 40;
    long warmup_steps = 200;
    size_t compress_n = 200;
};

int run_ablate(AblateCli& a) {
    RunConfig base_cfg = load_config(a.common);
    ensure_out(a.common);
    const Vocab& v = Vocab::toy();
    int workers = effective_workers(a.common);
    require_file(a.grid_path, "grid");
    require_file(a.data_path, "dataset");

    std::ifstream gin(a.grid_path);
    ordered_json grid;
    gin >> grid;
    if (!grid.contains("cells") || !grid["cells"].is_array() || grid["cells"].empty())
        throw std::runtime_error(a.grid_path + ": grid needs a non-empty \"cells\" array");
    if (grid.contains("steps")) a.steps = grid["steps"].get<long>();

    std::vector<Sample> data = load_dataset(a.data_path, v);
    DatasetSplit split = partition(data, a.rl_fraction, base_cfg.seed);

    Teacher teacher = make_teacher(a.teacher_ckpt, a.teacher_url, v);
    std::string init = a.init_ckpt.empty() ? a.teacher_ckpt : a.init_ckpt;
    require_file(init, "policy init checkpoint");

    // One shared warmup so every cell starts from the same policy.
    Model warm = load_model(init);
    {
        TrainPolicyCli wa;
        wa.warmup_steps = a.warmup_steps;
        warmup_policy(warm, split.d_rl, wa, base_cfg, v, workers);
    }

    ordered_json base_json = config_echo(base_cfg);
    ordered_json cells_out = ordered_json::array();
    std::ofstream csv(fs::path(a.common.out_dir) / "ablation.csv");
    csv << "name,reward_mode,beta,lambda_len,mean_reward_last10,mean_len_last10,"
           "mean_compression_last10,compress_mean_ratio\n";

    for (const auto& cell : grid["cells"]) {
        std::string name = cell.at("name").get<std::string>();
        ordered_json merged = base_json;
        if (cell.contains("overrides"))
            for (auto it = cell["overrides"].begin(); it != cell["overrides"].end(); ++it)
                merged[it.key()] = it.value();
        RunConfig cfg = run_config_from_json_text(merged.dump(), "grid cell " + name);

        Model policy = warm;
        TrainOptions topts;
        topts.steps = a.steps;
        topts.workers = workers;
        topts.checkpoint_every = 0;
        TrainResult tr = train(policy, teacher, split.d_rl, cfg, topts, v);

        double rew = 0, len = 0, comp = 0;
        size_t tail = std::min<size_t>(10, tr.records.size());
        for (size_t i = tr.records.size() - tail; i < tr.records.size(); i++) {
            rew += tr.records[i].mean_reward;
            len += tr.records[i].mean_compressed_len;
            comp += tr.records[i].mean_compression;
        }
        if (tail) {
            rew /= (double)tail;
            len /= (double)tail;
            comp /= (double)tail;
        }
        size_t nc = std::min(a.compress_n, split.d_sft.size());
        std::vector<Sample> head(split.d_sft.begin(), split.d_sft.begin() + nc);
        DecodeParams dp{0.0, cfg.max_compressed_len};
        CompressStats cst;
        compress_dataset(policy, head, dp, v, workers, &cst);

        ordered_json row;
        row["name"] = name;
        row["config"] = ordered_json::parse(run_config_to_json_text(cfg));
        row["mean_reward_last10"] = rew;
        row["mean_len_last10"] = len;
        row["mean_compression_last10"] = comp;
        row["compress_mean_ratio"] = cst.mean_ratio;
        cells_out.push_back(row);
        csv << name << ',' << to_string(cfg.reward_mode) << ',' << cfg.beta << ','
            << cfg.lambda_len << ',' << rew << ',' << len << ',' << comp << ','
            << cst.mean_ratio << '\n';
        std::printf("ablate cell %s: reward %.4f len %.1f ratio %.3f\n", name.c_str(), rew, len,
                    cst.mean_ratio);
    }
    ordered_json sec;
    sec["grid"] = a.grid_path;
    sec["steps"] = a.steps;
    sec["cells"] = cells_out;
    sec["seed"] = base_cfg.seed;
    write_report_section(a.common.out_dir, "ablate", sec);
    std::printf("ablate: %zu cells -> %s/ablation.csv\n", cells_out.size(),
                a.common.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reward-driven compression of verbose reasoning traces (toy scale)"};
    app.require_subcommand(1);

    GenCli gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "generate the verbose corpus");
    add_common(cmd_gen, gen.common);
    cmd_gen->add_option("--n", gen.gp.n_queries, "number of queries");
    cmd_gen->add_option("--mode", gen.mode, "synthetic | teacher");
    cmd_gen->add_option("--teacher", gen.teacher_ckpt, "teacher checkpoint (teacher mode)");
    cmd_gen->add_option("--teacher-url", gen.teacher_url, "remote teacher host:port");
    cmd_gen->add_option("--k-samples", gen.gp.k_samples, "rejection attempts per query");
    cmd_gen->add_option("--difficulty-min", gen.gp.difficulty_min);
    cmd_gen->add_option("--difficulty-max", gen.gp.difficulty_max);
    cmd_gen->add_option("--dup-prob", gen.gp.redundancy.dup_step_prob);
    cmd_gen->add_option("--filler-prob", gen.gp.redundancy.filler_run_prob);
    cmd_gen->add_option("--filler-len", gen.gp.redundancy.filler_run_len);
    cmd_gen->add_option("--restate-prob", gen.gp.redundancy.restate_query_prob);
    cmd_gen->add_option("--operand-max", gen.gp.query.operand_max);
    cmd_gen->add_option("--mul-prob", gen.gp.query.mul_prob);
    cmd_gen->add_option("--mul-max", gen.gp.query.mul_operand_max);
    cmd_gen->add_option("--teacher-temp", gen.gp.teacher_temperature);
    cmd_gen->add_option("--teacher-max-new", gen.gp.teacher_max_new);

    TrainTeacherCli tt;
    auto* cmd_tt = app.add_subcommand("train-teacher", "pretrain the frozen teacher model");
    add_common(cmd_tt, tt.common);
    cmd_tt->add_option("--data", tt.data_path, "training dataset")->required();
    cmd_tt->add_option("--steps", tt.steps);
    cmd_tt->add_option("--batch", tt.batch);
    cmd_tt->add_option("--lr", tt.lr);
    cmd_tt->add_option("--minimal-mix", tt.minimal_mix, "fraction trained on minimal traces");
    cmd_tt->add_option("--d-model", tt.mc.d_model);
    cmd_tt->add_option("--layers", tt.mc.n_layers);
    cmd_tt->add_option("--heads", tt.mc.n_heads);
    cmd_tt->add_option("--max-len", tt.mc.max_len);

    TrainPolicyCli tp;
    auto* cmd_tp = app.add_subcommand("train-policy", "GRPO-train the compression policy");
    add_common(cmd_tp, tp.common);
    cmd_tp->add_option("--data", tp.data_path, "full dataset (gets partitioned)")->required();
    cmd_tp->add_option("--teacher", tp.teacher_ckpt, "teacher checkpoint");
    cmd_tp->add_option("--teacher-url", tp.teacher_url, "remote teacher host:port");
    cmd_tp->add_option("--init", tp.init_ckpt, "policy init checkpoint (default: teacher)");
    cmd_tp->add_option("--rl-fraction", tp.rl_fraction);
    cmd_tp->add_option("--steps", tp.steps);
    cmd_tp->add_option("--warmup-steps", tp.warmup_steps);
    cmd_tp->add_option("--warmup-batch", tp.warmup_batch);
    cmd_tp->add_option("--warmup-lr", tp.warmup_lr);
    cmd_tp->add_option("--warmup-pow", tp.warmup_pow);
    cmd_tp->add_option("--checkpoint-every", tp.checkpoint_every);
    cmd_tp->add_flag("--marginal-answer-first", tp.marginal_answer_first,
                     "score the marginal reward as answer-then-trace");

    CompressCli comp;
    auto* cmd_comp = app.add_subcommand("compress", "greedy-compress a dataset with a policy");
    add_common(cmd_comp, comp.common);
    cmd_comp->add_option("--policy", comp.policy_ckpt, "policy checkpoint")->required();
    cmd_comp->add_option("--data", comp.data_path, "dataset to compress")->required();

    RegenCli regen;
    auto* cmd_regen = app.add_subcommand("regen", "regenerate answers from compressed traces");
    add_common(cmd_regen, regen.common);
    cmd_regen->add_option("--teacher", regen.teacher_ckpt, "teacher checkpoint");
    cmd_regen->add_option("--teacher-url", regen.teacher_url, "remote teacher host:port");
    cmd_regen->add_option("--data", regen.data_path, "compressed dataset")->required();
    cmd_regen->add_option("--temperature", regen.temperature);
    cmd_regen->add_option("--max-new", regen.max_new);

    SftCli sftc;
    auto* cmd_sft = app.add_subcommand("sft", "fine-tune a student on a dataset");
    add_common(cmd_sft, sftc.common);
    cmd_sft->add_option("--data", sftc.data_path, "training dataset")->required();
    cmd_sft->add_option("--init", sftc.init_ckpt, "init checkpoint (default: fresh)");
    cmd_sft->add_option("--epochs", sftc.opts.epochs);
    cmd_sft->add_option("--lr", sftc.opts.lr);
    cmd_sft->add_option("--batch", sftc.opts.batch);
    cmd_sft->add_option("--out-name", sftc.out_name, "checkpoint file name");
    cmd_sft->add_option("--d-model", sftc.mc.d_model);
    cmd_sft->add_option("--layers", sftc.mc.n_layers);
    cmd_sft->add_option("--heads", sftc.mc.n_heads);
    cmd_sft->add_option("--max-len", sftc.mc.max_len);

    EvalCli ev;
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a student on held-out queries");
    add_common(cmd_eval, ev.common);
    cmd_eval->add_option("--student", ev.student_ckpt, "student checkpoint")->required();
    cmd_eval->add_option("--n", ev.n, "held-out query count");
    cmd_eval->add_option("--runs", ev.runs, "independent runs per query");
    cmd_eval->add_option("--budgets", ev.budgets, "token budgets (ascending)");
    cmd_eval->add_option("--temperature", ev.temperature);
    cmd_eval->add_option("--max-new", ev.max_new);
    cmd_eval->add_option("--bin-width", ev.bin_width);
    cmd_eval->add_option("--exclude", ev.exclude, "datasets whose queries to exclude");
    cmd_eval->add_option("--baseline", ev.baseline_path, "baseline eval.json for compression rate");
    cmd_eval->add_option("--difficulty-min", ev.difficulty_min);
    cmd_eval->add_option("--difficulty-max", ev.difficulty_max);
    cmd_eval->add_option("--operand-max", ev.qgen.operand_max);
    cmd_eval->add_option("--mul-prob", ev.qgen.mul_prob);
    cmd_eval->add_option("--mul-max", ev.qgen.mul_operand_max);
    cmd_eval->add_option("--report-name", ev.report_name, "report file name");

    ReportCli rep;
    auto* cmd_rep = app.add_subcommand("report", "convert an eval report between formats");
    cmd_rep->add_option("--in", rep.in_path, "input eval.json")->required();
    cmd_rep->add_option("--format", rep.format, "json | csv");
    cmd_rep->add_option("--out", rep.out_path, "output file");

    ServeCli srv;
    auto* cmd_srv = app.add_subcommand("serve-teacher", "serve a teacher checkpoint over HTTP");
    cmd_srv->add_option("--teacher", srv.teacher_ckpt, "teacher checkpoint")->required();
    cmd_srv->add_option("--host", srv.host);
    cmd_srv->add_option("--port", srv.port);

    AblateCli ab;
    auto* cmd_ab = app.add_subcommand("ablate", "run a reward-shaping sweep from a grid file");
    add_common(cmd_ab, ab.common);
    cmd_ab->add_option("--grid", ab.grid_path, "grid JSON")->required();
    cmd_ab->add_option("--data", ab.data_path, "dataset")->required();
    cmd_ab->add_option("--teacher", ab.teacher_ckpt, "teacher checkpoint");
    cmd_ab->add_option("--teacher-url", ab.teacher_url, "remote teacher host:port");
    cmd_ab->add_option("--init", ab.init_ckpt, "policy init (default: teacher)");
    cmd_ab->add_option("--rl-fraction", ab.rl_fraction);
    cmd_ab->add_option("--steps", ab.steps);
    cmd_ab->add_option("--warmup-steps", ab.warmup_steps);
    cmd_ab->add_option("--compress-n", ab.compress_n);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors are exit 1, --help is 0
    }

    try {
        if (cmd_gen->parsed()) return run_gen_data(gen);
        if (cmd_tt->parsed()) return run_train_teacher(tt);
        if (cmd_tp->parsed()) return run_train_policy(tp);
        if (cmd_comp->parsed()) return run_compress(comp);
        if (cmd_regen->parsed()) return run_regen(regen);
        if (cmd_sft->parsed()) return run_sft(sftc);
        if (cmd_eval->parsed()) return run_eval(ev);
        if (cmd_rep->parsed()) return run_report(rep);
        if (cmd_srv->parsed()) return run_serve(srv);
        if (cmd_ab->parsed()) return run_ablate(ab);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
