#include "conmax/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace conmax {

double total_reward(double answer_score, double thinking_score, double beta) {
    if (!(beta >= 0.0)) throw std::invalid_argument("total_reward: beta must be >= 0");
    return answer_score + beta * thinking_score;
}

double length_reward(size_t orig_len, size_t compressed_len) {
    if (orig_len == 0) throw std::invalid_argument("length_reward: original length is 0");
    return ((double)orig_len - (double)compressed_len) / (double)orig_len;
}

std::vector<double> whiten(const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("whiten: need at least 2 values");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= (double)xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= (double)xs.size();  // population variance
    double std = std::sqrt(var);
    std::vector<double> out(xs.size(), 0.0);
    if (std < 1e-8) return out;  // degenerate group: no preference signal
    for (size_t i = 0; i < xs.size(); i++) out[i] = (xs[i] - mean) / std;
    return out;
}

std::vector<double> combined_reward(std::vector<RewardBreakdown>& group, RewardMode mode,
                                    double lambda_len) {
    if (group.size() < 2) throw std::invalid_argument("combined_reward: group must have >= 2");
    if (!(lambda_len >= 0.0))
        throw std::invalid_argument("combined_reward: lambda_len must be >= 0");
    std::vector<double> out(group.size());
    switch (mode) {
        case RewardMode::conmax:
            for (size_t i = 0; i < group.size(); i++) out[i] = group[i].confidence;
            break;
        case RewardMode::marginal:
            for (size_t i = 0; i < group.size(); i++) out[i] = group[i].marginal;
            break;
        case RewardMode::conmax_plus_len: {
            std::vector<double> conf(group.size()), len(group.size());
            for (size_t i = 0; i < group.size(); i++) {
                conf[i] = group[i].confidence;
                len[i] = group[i].len_reward;
            }
            std::vector<double> wc = whiten(conf), wl = whiten(len);
            for (size_t i = 0; i < group.size(); i++) out[i] = wc[i] + lambda_len * wl[i];
            break;
        }
    }
    for (size_t i = 0; i < group.size(); i++) group[i].combined = out[i];
    return out;
}

}  // namespace conmax
