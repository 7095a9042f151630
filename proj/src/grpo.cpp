#include "conmax/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "conmax/log.hpp"
#include "conmax/parallel.hpp"
#include "json.hpp"

namespace conmax {

RolloutGroup rollout(const Model& policy, const Sample& sample, const RunConfig& cfg,
                     const Vocab& v, uint64_t stream_seed, int workers) {
    if (sample.trace.empty()) throw std::invalid_argument("rollout: sample has empty trace");
    RolloutGroup g;
    g.sample_id = sample.id;
    g.query = sample.query;
    g.answer = sample.answer;
    g.source_trace_len = sample.trace.size();
    g.context.reserve(1 + sample.query.size() + sample.trace.size());
    g.context.push_back(v.compress);
    g.context.insert(g.context.end(), sample.query.begin(), sample.query.end());
    g.context.insert(g.context.end(), sample.trace.begin(), sample.trace.end());

    if ((int)g.context.size() + cfg.max_compressed_len > policy.cfg.max_len) {
        log_info("rollout: context of %zu cannot fit %d new tokens, skipping sample %s",
                 g.context.size(), cfg.max_compressed_len, sample.id.c_str());
        return g;  // empty candidate set signals the skip
    }

    g.cands.resize(cfg.group_size);
    parallel_for((size_t)cfg.group_size, workers, [&](size_t c) {
        Rng rng(mix_seed(stream_seed, (uint64_t)c));
        SampleResult r = sample_tokens(policy, g.context, cfg.temperature,
                                       cfg.max_compressed_len, v.end_think, rng);
        g.cands[c].tokens = std::move(r.tokens);
        g.cands[c].logp_old = std::move(r.logprobs);
    });
    return g;
}

void fill_reference_logprobs(const Model& ref, std::vector<RolloutGroup>& groups, int workers) {
    std::vector<std::pair<size_t, size_t>> flat;
    for (size_t gi = 0; gi < groups.size(); gi++)
        for (size_t ci = 0; ci < groups[gi].cands.size(); ci++) flat.push_back({gi, ci});
    parallel_for(flat.size(), workers, [&](size_t i) {
        auto [gi, ci] = flat[i];
        Candidate& c = groups[gi].cands[ci];
        c.logp_ref = token_logprobs(ref, groups[gi].context, c.tokens);
    });
}

std::vector<double> advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2) throw std::invalid_argument("advantages: need a group of >= 2");
    return whiten(rewards);
}

double token_objective(double logp_new, double logp_old, double logp_ref, double advantage,
                       double clip_eps, double beta_kl) {
    double r = std::exp(logp_new - logp_old);
    double unclipped = r * advantage;
    double clipped = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    double x = logp_ref - logp_new;
    double k3 = std::expm1(x) - x;  // >= 0, exactly 0 at x == 0
    return std::min(unclipped, clipped) - beta_kl * k3;
}

namespace {

struct StepAccum {
    double objective = 0.0, kl_sum = 0.0;
    size_t clipped = 0, tokens = 0;
};

// Walks every token of the included candidates, calling
//   per_cand(group, cand, inv_norm) before each candidate and
//   per_tok(t, obj_grad_t) with the ascent d(token objective)/d(logp_new_t).
// Returns accumulated objective/KL/clip stats.
template <class PerCand, class PerTok>
StepAccum step_walk(const std::vector<const RolloutGroup*>& included, double clip_eps,
                    double beta_kl, size_t lo, size_t hi, PerCand&& per_cand,
                    PerTok&& per_tok) {
    StepAccum acc;
    double inv_b = 1.0 / (double)included.size();
    size_t flat = 0;
    for (const RolloutGroup* g : included) {
        double inv_g = 1.0 / (double)g->cands.size();
        for (const Candidate& c : g->cands) {
            size_t idx = flat++;
            if (idx < lo || idx >= hi) continue;
            double inv_t = 1.0 / (double)c.tokens.size();
            double norm = inv_b * inv_g * inv_t;
            const std::vector<double>& lp_new = per_cand(*g, c, norm);
            for (size_t t = 0; t < c.tokens.size(); t++) {
                double r = std::exp(lp_new[t] - c.logp_old[t]);
                double unclipped = r * c.advantage;
                double clipped =
                    std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * c.advantage;
                double x = c.logp_ref[t] - lp_new[t];
                double k3 = std::expm1(x) - x;
                acc.objective += norm * (std::min(unclipped, clipped) - beta_kl * k3);
                acc.kl_sum += k3;
                acc.tokens++;
                double dsurr;
                if (clipped < unclipped) {
                    acc.clipped++;
                    dsurr = 0.0;  // ratio saturated against its advantage sign
                } else {
                    dsurr = unclipped;  // d(r A)/d logp_new = r A
                }
                double dkl = beta_kl * std::expm1(x);  // d(-beta k3)/d logp_new
                per_tok(t, norm * (dsurr + dkl));
            }
        }
    }
    return acc;
}

std::vector<const RolloutGroup*> included_groups(const std::vector<RolloutGroup>& groups) {
    std::vector<const RolloutGroup*> out;
    for (const auto& g : groups)
        if (g.cands.size() >= 2) out.push_back(&g);
    return out;
}

size_t count_cands(const std::vector<const RolloutGroup*>& gs) {
    size_t n = 0;
    for (auto* g : gs) n += g->cands.size();
    return n;
}

}  // namespace

double grpo_objective(const Model& policy, const std::vector<RolloutGroup>& groups,
                      const RunConfig& cfg) {
    auto included = included_groups(groups);
    if (included.empty()) return 0.0;
    size_t n = count_cands(included);
    std::vector<double> lp_buf;
    StepAccum acc = step_walk(
        included, cfg.clip_eps, cfg.beta_kl, 0, n,
        [&](const RolloutGroup& g, const Candidate& c, double) -> const std::vector<double>& {
            lp_buf = token_logprobs(policy, g.context, c.tokens);
            return lp_buf;
        },
        [](size_t, double) {});
    return acc.objective;
}

StepStats grpo_step(Model& policy, Adam& opt, const std::vector<RolloutGroup>& groups,
                    const RunConfig& cfg, int workers) {
    StepStats stats;
    auto included = included_groups(groups);
    if (included.empty()) {
        log_error("grpo_step: no groups with >= 2 candidates, skipping");
        return stats;
    }
    size_t n_cands = count_cands(included);
    size_t slots = n_slots(n_cands, workers);

    std::vector<std::vector<double>> slot_grad(slots);
    std::vector<StepAccum> slot_acc(slots);
    for (auto& sg : slot_grad) sg.assign(policy.p.size(), 0.0);

    parallel_for_slots(n_cands, workers, [&](size_t i, size_t slot) {
        // Each call processes exactly candidate i; the walk skips the rest.
        std::vector<double> lp_buf, w;
        const RolloutGroup* cur_g = nullptr;
        const Candidate* cur_c = nullptr;
        StepAccum acc = step_walk(
            included, cfg.clip_eps, cfg.beta_kl, i, i + 1,
            [&](const RolloutGroup& g, const Candidate& c,
                double) -> const std::vector<double>& {
                cur_g = &g;
                cur_c = &c;
                lp_buf = token_logprobs(policy, g.context, c.tokens);
                w.assign(c.tokens.size(), 0.0);
                return lp_buf;
            },
            [&](size_t t, double ascent_w) { w[t] = -ascent_w; });  // minimize -J
        if (cur_c && !cur_c->tokens.empty())
            weighted_logprob_backward(policy, cur_g->context, cur_c->tokens, w,
                                      slot_grad[slot]);
        slot_acc[slot].objective += acc.objective;
        slot_acc[slot].kl_sum += acc.kl_sum;
        slot_acc[slot].clipped += acc.clipped;
        slot_acc[slot].tokens += acc.tokens;
    });

    StepAccum total;
    for (const auto& a : slot_acc) {
        total.objective += a.objective;
        total.kl_sum += a.kl_sum;
        total.clipped += a.clipped;
        total.tokens += a.tokens;
    }
    std::vector<double> grad(policy.p.size(), 0.0);
    for (size_t s = 0; s < slots; s++)
        for (size_t i = 0; i < grad.size(); i++) grad[i] += slot_grad[s][i];

    stats.objective = total.objective;
    stats.mean_kl = total.tokens ? total.kl_sum / (double)total.tokens : 0.0;
    stats.clip_fraction = total.tokens ? (double)total.clipped / (double)total.tokens : 0.0;
    stats.grad_norm = grad_l2norm(grad);
    stats.n_tokens = total.tokens;
    stats.n_candidates = n_cands;

    if (!std::isfinite(stats.grad_norm) || !std::isfinite(stats.objective)) {
        log_error("grpo_step: non-finite gradient or objective, step aborted");
        return stats;
    }
    adam_step(opt, policy.p, grad);
    stats.applied = true;
    return stats;
}

void score_group(const Teacher& teacher, RolloutGroup& g, const RunConfig& cfg,
                 bool marginal_answer_first, int workers) {
    if (g.cands.size() < 2) return;
    parallel_for(g.cands.size(), workers, [&](size_t i) {
        Candidate& c = g.cands[i];
        auto [think, ans] = teacher.score_pair(g.query, c.tokens, g.answer);
        c.reward.thinking_score = think;
        c.reward.answer_score = ans;
        c.reward.confidence = total_reward(ans, think, cfg.beta);
        c.reward.len_reward = length_reward(g.source_trace_len, c.tokens.size());
        if (cfg.reward_mode == RewardMode::marginal)
            c.reward.marginal =
                teacher.score_marginal(g.query, c.tokens, g.answer, marginal_answer_first);
    });
    std::vector<RewardBreakdown> rb(g.cands.size());
    for (size_t i = 0; i < g.cands.size(); i++) rb[i] = g.cands[i].reward;
    std::vector<double> combined = combined_reward(rb, cfg.reward_mode, cfg.lambda_len);
    std::vector<double> adv = advantages(combined);
    for (size_t i = 0; i < g.cands.size(); i++) {
        g.cands[i].reward = rb[i];
        g.cands[i].advantage = adv[i];
    }
}

// stream-derivation tags so shuffling and rollouts draw from disjoint streams
static constexpr uint64_t kShuffleTag = 0x73687566ull;
static constexpr uint64_t kRolloutTag = 0x726f6c6cull;

static nlohmann::ordered_json record_json(const TrainLogRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["mean_reward"] = r.mean_reward;
    j["mean_compressed_len"] = r.mean_compressed_len;
    j["mean_compression"] = r.mean_compression;
    j["mean_kl"] = r.mean_kl;
    j["clip_fraction"] = r.clip_fraction;
    j["grad_norm"] = r.grad_norm;
    return j;
}

TrainResult train(Model& policy, const Teacher& teacher, const std::vector<Sample>& d_rl,
                  const RunConfig& cfg, const TrainOptions& opts, const Vocab& v) {
    cfg.validate();
    if (d_rl.empty()) throw std::invalid_argument("train: empty RL dataset");
    TrainResult res;
    Model ref = policy;  // frozen reference for the KL term
    Adam opt(policy.p.size(), cfg.learning_rate);

    std::ofstream log_file;
    if (!opts.out_dir.empty()) {
        log_file.open(opts.out_dir + "/train_log.jsonl");
        if (!log_file)
            throw std::runtime_error("cannot open train log in " + opts.out_dir);
    }

    std::vector<size_t> order(d_rl.size());
    size_t cursor = order.size();  // force a shuffle on first use
    uint64_t epoch = 0;
    auto next_sample = [&]() -> const Sample& {
        if (cursor >= order.size()) {
            for (size_t i = 0; i < order.size(); i++) order[i] = i;
            Rng sh(mix_seed(cfg.seed, kShuffleTag, epoch));
            sh.shuffle(order);
            cursor = 0;
            epoch++;
        }
        return d_rl[order[cursor++]];
    };

    for (long step = 1; step <= opts.steps; step++) {
        std::vector<RolloutGroup> groups;
        groups.reserve(cfg.batch_queries);
        for (int b = 0; b < cfg.batch_queries; b++) {
            const Sample& s = next_sample();
            uint64_t stream = mix_seed(cfg.seed, kRolloutTag, (uint64_t)step, (uint64_t)b);
            RolloutGroup g = rollout(policy, s, cfg, v, stream, opts.workers);
            if (g.cands.empty()) {
                res.skipped_samples++;
                continue;
            }
            groups.push_back(std::move(g));
        }
        fill_reference_logprobs(ref, groups, opts.workers);
        for (auto& g : groups)
            score_group(teacher, g, cfg, opts.marginal_answer_first, opts.workers);

        StepStats st = grpo_step(policy, opt, groups, cfg, opts.workers);

        TrainLogRecord rec;
        rec.step = step;
        size_t n = 0;
        for (const auto& g : groups)
            for (const auto& c : g.cands) {
                rec.mean_reward += c.reward.combined;
                rec.mean_compressed_len += (double)c.tokens.size();
                rec.mean_compression += c.reward.len_reward;
                n++;
            }
        if (n) {
            rec.mean_reward /= (double)n;
            rec.mean_compressed_len /= (double)n;
            rec.mean_compression /= (double)n;
        }
        rec.mean_kl = st.mean_kl;
        rec.clip_fraction = st.clip_fraction;
        rec.grad_norm = st.grad_norm;
        res.records.push_back(rec);
        if (log_file) log_file << record_json(rec).dump() << '\n';
        log_info("step %ld reward %.4f len %.1f compression %.3f kl %.2e", step,
                 rec.mean_reward, rec.mean_compressed_len, rec.mean_compression, rec.mean_kl);

        if (!opts.out_dir.empty() && opts.checkpoint_every > 0 &&
            step % opts.checkpoint_every == 0)
            save_model(policy, opts.out_dir + "/step-" + std::to_string(step) + ".ckpt");
    }
    return res;
}

}  // namespace conmax
