#pragma once
// Group-relative policy optimization for the compression policy: sample G
// candidate compressed traces per query, score them with the frozen teacher,
// standardize rewards within the group into advantages, and take one clipped
// surrogate ascent step per batch (with a k3 KL penalty toward the frozen
// reference). No value critic.

#include <cstdint>
#include <string>
#include <vector>

#include "conmax/data.hpp"
#include "conmax/model.hpp"
#include "conmax/rewards.hpp"
#include "conmax/teacher.hpp"
#include "conmax/vocab.hpp"

namespace conmax {

struct Candidate {
    std::vector<int> tokens;       // compressed trace, may end with <end_think>
    std::vector<double> logp_old;  // under the sampling-time policy
    std::vector<double> logp_ref;  // under the frozen reference
    RewardBreakdown reward;
    double advantage = 0.0;
};

struct RolloutGroup {
    std::string sample_id;
    std::vector<int> context;  // <compress> query trace
    std::vector<int> query;
    std::vector<int> answer;
    size_t source_trace_len = 0;
    std::vector<Candidate> cands;
};

struct TrainLogRecord {
    long step = 0;
    double mean_reward = 0.0;
    double mean_compressed_len = 0.0;
    double mean_compression = 0.0;  // mean (|z|-|zhat|)/|z| vs source traces
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
};

// Samples G candidates from policy(. | <compress> query trace) at the config
// temperature, stopping at <end_think> or max_compressed_len. Per-candidate
// seeds derive from stream_seed, so results are worker-count independent.
// A context that cannot fit max_compressed_len more tokens yields an empty
// group (the caller logs and skips it).
RolloutGroup rollout(const Model& policy, const Sample& sample, const RunConfig& cfg,
                     const Vocab& v, uint64_t stream_seed, int workers = 1);

// Fills cand.logp_ref for every candidate in every group.
void fill_reference_logprobs(const Model& ref, std::vector<RolloutGroup>& groups,
                             int workers = 1);

// Group-standardized rewards, broadcast per token later. G >= 2.
std::vector<double> advantages(const std::vector<double>& rewards);

// One token's clipped-surrogate term: min(r A, clip(r) A) - beta_kl * k3.
double token_objective(double logp_new, double logp_old, double logp_ref, double advantage,
                       double clip_eps, double beta_kl);

struct StepStats {
    double objective = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
    size_t n_tokens = 0;
    size_t n_candidates = 0;
    bool applied = false;  // false when the gradient went non-finite
};

// One ascent step on the batch objective
//   J = (1/B) sum_groups (1/G) sum_i (1/|zhat_i|) sum_t token_objective.
// Advantages and rewards must be populated. Groups with fewer than two
// candidates are ignored.
StepStats grpo_step(Model& policy, Adam& opt, const std::vector<RolloutGroup>& groups,
                    const RunConfig& cfg, int workers = 1);

// The same J without touching parameters or gradients (finite-difference
// oracle hook).
double grpo_objective(const Model& policy, const std::vector<RolloutGroup>& groups,
                      const RunConfig& cfg);

struct TrainOptions {
    long steps = 100;
    std::string out_dir;  // empty: no train_log.jsonl / checkpoints
    int workers = 1;
    long checkpoint_every = 50;
    bool marginal_answer_first = false;  // order flip for score_marginal
};

struct TrainResult {
    std::vector<TrainLogRecord> records;
    size_t skipped_samples = 0;  // context overflows
};

// Snapshot the reference from the incoming policy, then iterate
// rollout -> score -> advantages -> grpo_step for opts.steps steps.
// Writes train_log.jsonl and step-<N>.ckpt files under out_dir.
TrainResult train(Model& policy, const Teacher& teacher, const std::vector<Sample>& d_rl,
                  const RunConfig& cfg, const TrainOptions& opts, const Vocab& v);

// Scores one candidate group in place: fused thinking/answer scores,
// confidence, length reward, and (in marginal mode) the marginal score;
// then combined rewards and advantages. Exposed for tests.
void score_group(const Teacher& teacher, RolloutGroup& g, const RunConfig& cfg,
                 bool marginal_answer_first, int workers = 1);

}  // namespace conmax
