#pragma once
// The data pipeline around the policy: build a verbose corpus (synthetic
// injection or teacher rejection-sampling), split it, compress the SFT half
// with a trained policy, regenerate answers from compressed traces with the
// teacher, and fine-tune students.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "conmax/data.hpp"
#include "conmax/model.hpp"
#include "conmax/teacher.hpp"
#include "conmax/toycorpus.hpp"
#include "conmax/vocab.hpp"

namespace conmax {

struct DatasetSplit {
    std::vector<Sample> d_sft;
    std::vector<Sample> d_rl;
};

struct GenParams {
    size_t n_queries = 5000;
    int k_samples = 4;  // teacher-mode attempts per query
    int difficulty_min = 2;
    int difficulty_max = 3;
    QueryGenParams query;
    RedundancyParams redundancy;
    double teacher_temperature = 1.0;  // teacher-mode decode settings
    int teacher_max_new = 96;
};

struct GenStats {
    size_t requested = 0, kept = 0, dropped = 0;
    std::map<int, size_t> attempted_per_difficulty;
    std::map<int, size_t> kept_per_difficulty;
    double mean_trace_len = 0.0;
    double mean_minimal_len = 0.0;  // minimal-trace baseline for the same queries
    double mean_inflation = 0.0;    // mean |z| / |z_minimal|
};

// Synthetic mode: minimal traces padded by inject_redundancy. Every output
// passes verify_answer by construction.
std::vector<Sample> build_dataset_synthetic(const GenParams& gp, uint64_t seed, const Vocab& v,
                                            GenStats* stats = nullptr);

// Teacher mode: rejection sampling; up to k_samples completions per query,
// keeping the first whose trace+answer splits cleanly and whose answer
// verifies. Queries with no pass are dropped (and counted).
std::vector<Sample> build_dataset_teacher(const Teacher& teacher, const GenParams& gp,
                                          uint64_t seed, const Vocab& v, int workers = 1,
                                          GenStats* stats = nullptr);

// Seeded shuffle, then the first round(rl_fraction * n) samples become d_rl.
DatasetSplit partition(const std::vector<Sample>& samples, double rl_fraction, uint64_t seed);

struct CompressStats {
    size_t n = 0, flagged = 0, terminated = 0;
    double mean_source_len = 0.0;
    double mean_compressed_len = 0.0;
    double mean_ratio = 0.0;  // mean |zhat| / |z|
};

// Greedy-decodes one compressed trace per sample (dp.max_new is the cap;
// decoding is always greedy for reproducibility). Samples whose context
// cannot fit the cap keep their original trace and are flagged.
std::vector<CompressedSample> compress_dataset(const Model& policy,
                                               const std::vector<Sample>& d_sft,
                                               const DecodeParams& dp, const Vocab& v,
                                               int workers = 1, CompressStats* stats = nullptr);

struct RegenStats {
    size_t in = 0, kept = 0, dropped = 0, skipped_flagged = 0;
    double retention = 0.0;  // kept / attempted
};

// For each unflagged compressed sample, the teacher completes x ∘ zhat; the
// completion is kept as the new answer iff it verifies exactly. Greedy when
// dp.temperature is 0; seed drives any sampled decoding.
std::vector<Sample> regenerate(const Teacher& teacher, const std::vector<CompressedSample>& in,
                               const DecodeParams& dp, uint64_t seed, const Vocab& v,
                               int workers = 1, RegenStats* stats = nullptr);

struct SftOptions {
    int epochs = 6;
    double lr = 1.5e-3;
    int batch = 16;
    uint64_t seed = 42;
    int workers = 1;
};

struct SftResult {
    std::vector<double> epoch_losses;
};

// Cross-entropy fine-tuning on (ctx = query, tgt = trace ∘ answer) pairs:
// the loss covers trace and answer positions only. Cosine learning-rate
// decay, no warmup.
SftResult sft(Model& student, const std::vector<Sample>& dataset, const SftOptions& opts,
              const Vocab& v);

}  // namespace conmax
