#pragma once
// Dataset records and run configuration, plus JSONL / JSON file formats.
// Token sequences live in memory as id vectors and on disk as space-joined
// token strings, so the files stay greppable.

#include <cstdint>
#include <string>
#include <vector>

#include "conmax/vocab.hpp"

namespace conmax {

// One verbose training sample: query x, reasoning trace z, answer y.
// The answer is stored fully marked: <ans> d1 ... dk <eos>.
struct Sample {
    std::string id;
    std::vector<int> query;
    std::vector<int> trace;
    std::vector<int> answer;
};

// A sample whose trace has been rewritten by the compression policy.
// Keeps the original fields so downstream stages can re-derive rewards.
struct CompressedSample {
    std::string id;
    std::vector<int> query;
    std::vector<int> trace;
    std::vector<int> answer;
    std::vector<int> compressed_trace;
    size_t source_trace_len = 0;
    bool flagged = false;  // hit the length cap without terminating
};

enum class RewardMode { conmax, marginal, conmax_plus_len };

const char* to_string(RewardMode m);
RewardMode reward_mode_from_string(const std::string& s);

// Knobs for one policy-training run. JSON configs may set any subset of
// these keys; unknown keys are rejected.
struct RunConfig {
    double beta = 1.2;            // weight of the thinking score in R_c
    double lambda_len = 0.0;      // weight of the length reward
    double beta_kl = 0.001;       // KL penalty toward the reference policy
    double clip_eps = 0.2;        // ratio clip half-width
    int group_size = 8;           // candidates per query (G)
    int batch_queries = 32;       // queries per optimizer step
    double learning_rate = 3e-4;
    double temperature = 1.0;     // rollout sampling temperature
    int max_compressed_len = 48;  // generation cap for compressed traces
    uint64_t seed = 42;
    RewardMode reward_mode = RewardMode::conmax;

    void validate() const;  // throws std::invalid_argument
};

// --- dataset files (JSONL, one record per line) ---

void save_dataset(const std::vector<Sample>& samples, const std::string& path, const Vocab& v);
std::vector<Sample> load_dataset(const std::string& path, const Vocab& v);

void save_compressed(const std::vector<CompressedSample>& samples, const std::string& path,
                     const Vocab& v);
std::vector<CompressedSample> load_compressed(const std::string& path, const Vocab& v);

// Structural checks shared by generators and loaders: non-empty query/trace,
// answer of the form <ans> digits <eos>, all ids within the vocab.
void check_sample(const Sample& s, const Vocab& v);

// Answer payload between the <ans> / <eos> markers. Throws if the
// sequence is not a well-formed marked answer.
std::vector<int> answer_payload(const std::vector<int>& answer, const Vocab& v);

// --- run config files ---

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);
RunConfig run_config_from_json_text(const std::string& text, const std::string& origin);
std::string run_config_to_json_text(const RunConfig& cfg);

}  // namespace conmax
