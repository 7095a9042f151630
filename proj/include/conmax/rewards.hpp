#pragma once
// Reward shaping for compression candidates. The confidence reward adds the
// teacher's answer score to a beta-weighted thinking score; the length
// reward pays for relative shrinkage; group whitening (mean 0 / std 1 with
// a degenerate-group guard) makes the two commensurable before mixing.

#include <cstddef>
#include <vector>

#include "conmax/data.hpp"

namespace conmax {

// R_c = answer score + beta * thinking score
double total_reward(double answer_score, double thinking_score, double beta);

// (|z| - |zhat|) / |z|; positive when the trace shrank. orig_len must be > 0.
double length_reward(size_t orig_len, size_t compressed_len);

// Population-standardize: mean 0, std 1. Groups need >= 2 entries. If the
// population std is below 1e-8 every output is 0.
std::vector<double> whiten(const std::vector<double>& xs);

// Per-candidate reward pieces, filled in by the scoring stage.
struct RewardBreakdown {
    double answer_score = 0.0;
    double thinking_score = 0.0;
    double confidence = 0.0;  // total_reward of the two above
    double len_reward = 0.0;
    double marginal = 0.0;  // only meaningful in marginal mode
    double combined = 0.0;  // what the optimizer sees
};

// Fills `combined` for one rollout group according to the reward mode:
//   conmax          -> R_c
//   marginal        -> marginal score
//   conmax_plus_len -> whiten(R_c) + lambda_len * whiten(R_len)
std::vector<double> combined_reward(std::vector<RewardBreakdown>& group, RewardMode mode,
                                    double lambda_len);

}  // namespace conmax
