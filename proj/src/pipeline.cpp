#include "conmax/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "conmax/log.hpp"
#include "conmax/parallel.hpp"

namespace conmax {

static constexpr uint64_t kGenTag = 0x67656e64ull;
static constexpr uint64_t kSplitTag = 0x73706c74ull;
static constexpr uint64_t kRegenTag = 0x7265676eull;
static constexpr uint64_t kSftTag = 0x73667431ull;

static std::string sample_id(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "q%06zu", i);
    return buf;
}

static ToyQuery gen_for_index(const GenParams& gp, uint64_t seed, size_t i, Rng& rng) {
    rng = Rng(mix_seed(seed, kGenTag, (uint64_t)i));
    int span = gp.difficulty_max - gp.difficulty_min + 1;
    if (gp.difficulty_min < 2 || gp.difficulty_max > 8 || span < 1)
        throw std::invalid_argument("difficulty range must sit inside [2, 8]");
    int difficulty = gp.difficulty_min + (int)rng.below((uint64_t)span);
    return gen_query(rng, difficulty, gp.query);
}

std::vector<Sample> build_dataset_synthetic(const GenParams& gp, uint64_t seed, const Vocab& v,
                                            GenStats* stats) {
    GenStats st;
    st.requested = gp.n_queries;
    std::vector<Sample> out;
    out.reserve(gp.n_queries);
    double trace_sum = 0.0, minimal_sum = 0.0, inflation_sum = 0.0;
    for (size_t i = 0; i < gp.n_queries; i++) {
        Rng rng(0);
        ToyQuery q = gen_for_index(gp, seed, i, rng);
        std::vector<int> minimal = minimal_trace(q, v);
        Sample s;
        s.id = sample_id(i);
        s.query = query_tokens(q, v);
        s.trace = inject_redundancy(minimal, gp.redundancy, rng, v);
        s.answer = answer_of(q, v);
        st.attempted_per_difficulty[q.difficulty()]++;
        st.kept_per_difficulty[q.difficulty()]++;
        trace_sum += (double)s.trace.size();
        minimal_sum += (double)minimal.size();
        inflation_sum += (double)s.trace.size() / (double)minimal.size();
        out.push_back(std::move(s));
    }
    st.kept = out.size();
    if (st.kept) {
        st.mean_trace_len = trace_sum / (double)st.kept;
        st.mean_minimal_len = minimal_sum / (double)st.kept;
        st.mean_inflation = inflation_sum / (double)st.kept;
    }
    if (stats) *stats = st;
    return out;
}

// A teacher completion of a bare query should read "z ... <end_think> <ans>
// d+ <eos>"; split at the first <ans> and insist on exact verification.
static std::optional<Sample> accept_completion(const ToyQuery& q, const std::vector<int>& query,
                                               const std::vector<int>& completion,
                                               const Vocab& v) {
    auto it = std::find(completion.begin(), completion.end(), v.ans);
    if (it == completion.begin() || it == completion.end()) return std::nullopt;
    Sample s;
    s.query = query;
    s.trace.assign(completion.begin(), it);
    s.answer.assign(it, completion.end());
    if (s.trace.back() != v.end_think) return std::nullopt;
    if (!verify_answer(q, s.answer, v)) return std::nullopt;
    return s;
}

std::vector<Sample> build_dataset_teacher(const Teacher& teacher, const GenParams& gp,
                                          uint64_t seed, const Vocab& v, int workers,
                                          GenStats* stats) {
    if (gp.k_samples < 1) throw std::invalid_argument("k_samples must be >= 1");
    GenStats st;
    st.requested = gp.n_queries;
    std::vector<std::optional<Sample>> slots(gp.n_queries);
    std::vector<int> difficulty(gp.n_queries);
    DecodeParams dp{gp.teacher_temperature, gp.teacher_max_new};

    parallel_for(gp.n_queries, workers, [&](size_t i) {
        Rng rng(0);
        ToyQuery q = gen_for_index(gp, seed, i, rng);
        difficulty[i] = q.difficulty();
        std::vector<int> query = query_tokens(q, v);
        for (int k = 0; k < gp.k_samples; k++) {
            uint64_t s = mix_seed(seed, kGenTag, (uint64_t)i, (uint64_t)k + 1);
            std::vector<int> completion = teacher.complete(query, dp, s);
            auto cand = accept_completion(q, query, completion, v);
            if (cand) {
                slots[i] = std::move(cand);
                break;
            }
        }
    });

    std::vector<Sample> out;
    double trace_sum = 0.0, minimal_sum = 0.0, inflation_sum = 0.0;
    for (size_t i = 0; i < slots.size(); i++) {
        st.attempted_per_difficulty[difficulty[i]]++;
        if (!slots[i]) continue;
        Sample s = std::move(*slots[i]);
        s.id = sample_id(i);
        st.kept_per_difficulty[difficulty[i]]++;
        ToyQuery q = parse_query(s.query, v);
        double ml = (double)minimal_trace(q, v).size();
        trace_sum += (double)s.trace.size();
        minimal_sum += ml;
        inflation_sum += (double)s.trace.size() / ml;
        out.push_back(std::move(s));
    }
    st.kept = out.size();
    st.dropped = st.requested - st.kept;
    if (st.kept) {
        st.mean_trace_len = trace_sum / (double)st.kept;
        st.mean_minimal_len = minimal_sum / (double)st.kept;
        st.mean_inflation = inflation_sum / (double)st.kept;
    }
    if (stats) *stats = st;
    log_info("teacher-mode corpus: kept %zu of %zu queries", st.kept, st.requested);
    return out;
}

DatasetSplit partition(const std::vector<Sample>& samples, double rl_fraction, uint64_t seed) {
    if (samples.empty()) throw std::invalid_argument("partition: empty sample set");
    if (!(rl_fraction > 0.0 && rl_fraction < 1.0))
        throw std::invalid_argument("partition: rl_fraction must be in (0, 1)");
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;
    Rng rng(mix_seed(seed, kSplitTag));
    rng.shuffle(order);
    size_t n_rl = (size_t)std::llround(rl_fraction * (double)samples.size());
    DatasetSplit split;
    split.d_rl.reserve(n_rl);
    split.d_sft.reserve(samples.size() - n_rl);
    for (size_t i = 0; i < order.size(); i++)
        (i < n_rl ? split.d_rl : split.d_sft).push_back(samples[order[i]]);
    return split;
}

std::vector<CompressedSample> compress_dataset(const Model& policy,
                                               const std::vector<Sample>& d_sft,
                                               const DecodeParams& dp, const Vocab& v,
                                               int workers, CompressStats* stats) {
    if (dp.max_new < 1) throw std::invalid_argument("compress: max_new must be >= 1");
    std::vector<CompressedSample> out(d_sft.size());
    parallel_for(d_sft.size(), workers, [&](size_t i) {
        const Sample& s = d_sft[i];
        CompressedSample& c = out[i];
        c.id = s.id;
        c.query = s.query;
        c.trace = s.trace;
        c.answer = s.answer;
        c.source_trace_len = s.trace.size();
        std::vector<int> ctx;
        ctx.reserve(1 + s.query.size() + s.trace.size());
        ctx.push_back(v.compress);
        ctx.insert(ctx.end(), s.query.begin(), s.query.end());
        ctx.insert(ctx.end(), s.trace.begin(), s.trace.end());
        if ((int)ctx.size() + dp.max_new > policy.cfg.max_len) {
            c.compressed_trace = s.trace;  // retained uncompressed
            c.flagged = true;
            return;
        }
        Rng rng(0);  // greedy path draws nothing
        c.compressed_trace = sample_tokens(policy, ctx, 0.0, dp.max_new, v.end_think, rng).tokens;
    });
    if (stats) {
        CompressStats st;
        st.n = out.size();
        for (const auto& c : out) {
            if (c.flagged) st.flagged++;
            if (!c.compressed_trace.empty() && c.compressed_trace.back() == v.end_think)
                st.terminated++;
            st.mean_source_len += (double)c.source_trace_len;
            st.mean_compressed_len += (double)c.compressed_trace.size();
            st.mean_ratio += (double)c.compressed_trace.size() / (double)c.source_trace_len;
        }
        if (st.n) {
            st.mean_source_len /= (double)st.n;
            st.mean_compressed_len /= (double)st.n;
            st.mean_ratio /= (double)st.n;
        }
        *stats = st;
    }
    return out;
}

std::vector<Sample> regenerate(const Teacher& teacher, const std::vector<CompressedSample>& in,
                               const DecodeParams& dp, uint64_t seed, const Vocab& v,
                               int workers, RegenStats* stats) {
    RegenStats st;
    st.in = in.size();
    std::vector<std::optional<Sample>> slots(in.size());
    std::vector<char> skipped(in.size(), 0);
    parallel_for(in.size(), workers, [&](size_t i) {
        const CompressedSample& c = in[i];
        if (c.flagged || c.compressed_trace.empty()) {
            skipped[i] = 1;
            return;
        }
        std::vector<int> prefix = c.query;
        prefix.insert(prefix.end(), c.compressed_trace.begin(), c.compressed_trace.end());
        std::vector<int> completion =
            teacher.complete(prefix, dp, mix_seed(seed, kRegenTag, (uint64_t)i));
        ToyQuery q = parse_query(c.query, v);
        if (!verify_answer(q, completion, v)) return;
        Sample s;
        s.id = c.id;
        s.query = c.query;
        s.trace = c.compressed_trace;
        s.answer = completion;
        slots[i] = std::move(s);
    });
    std::vector<Sample> out;
    for (size_t i = 0; i < slots.size(); i++) {
        if (skipped[i]) {
            st.skipped_flagged++;
        } else if (slots[i]) {
            out.push_back(std::move(*slots[i]));
            st.kept++;
        } else {
            st.dropped++;
        }
    }
    size_t attempted = st.kept + st.dropped;
    st.retention = attempted ? (double)st.kept / (double)attempted : 0.0;
    if (stats) *stats = st;
    log_info("regenerate: kept %zu dropped %zu skipped %zu", st.kept, st.dropped,
             st.skipped_flagged);
    return out;
}

SftResult sft(Model& student, const std::vector<Sample>& dataset, const SftOptions& opts,
              const Vocab& v) {
    (void)v;
    if (dataset.empty()) throw std::invalid_argument("sft: empty dataset");
    if (opts.epochs < 1 || opts.batch < 1) throw std::invalid_argument("sft: bad options");
    Adam opt(student.p.size(), opts.lr);
    size_t steps_per_epoch = (dataset.size() + opts.batch - 1) / opts.batch;
    size_t total_steps = steps_per_epoch * (size_t)opts.epochs;
    SftResult res;
    std::vector<size_t> order(dataset.size());
    size_t step = 0;
    for (int e = 0; e < opts.epochs; e++) {
        for (size_t i = 0; i < order.size(); i++) order[i] = i;
        Rng sh(mix_seed(opts.seed, kSftTag, (uint64_t)e));
        sh.shuffle(order);
        double epoch_loss = 0.0;
        size_t epoch_batches = 0;
        for (size_t lo = 0; lo < order.size(); lo += opts.batch) {
            size_t hi = std::min(order.size(), lo + opts.batch);
            std::vector<SeqPair> batch;
            batch.reserve(hi - lo);
            for (size_t i = lo; i < hi; i++) {
                const Sample& s = dataset[order[i]];
                SeqPair sp;
                sp.ctx = s.query;
                sp.tgt = s.trace;
                sp.tgt.insert(sp.tgt.end(), s.answer.begin(), s.answer.end());
                batch.push_back(std::move(sp));
            }
            // cosine decay over the full run, no warmup
            opt.lr = opts.lr * 0.5 *
                     (1.0 + std::cos(std::numbers::pi * (double)step / (double)total_steps));
            epoch_loss += xent_step(student, opt, batch, opts.workers);
            epoch_batches++;
            step++;
        }
        res.epoch_losses.push_back(epoch_loss / (double)epoch_batches);
        log_info("sft epoch %d loss %.4f", e + 1, res.epoch_losses.back());
    }
    return res;
}

}  // namespace conmax
