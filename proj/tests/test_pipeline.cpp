#include <algorithm>
#include <cmath>
#include <set>

#include "conmax/pipeline.hpp"
#include "conmax/toycorpus.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace conmax;
using namespace conmax::testing;

TEST_CASE("synthetic corpus: verified answers and measured inflation") {
    const Vocab& v = Vocab::toy();
    GenParams gp;
    gp.n_queries = 150;
    GenStats st;
    std::vector<Sample> data = build_dataset_synthetic(gp, 42, v, &st);
    REQUIRE(data.size() == 150);
    CHECK(st.kept == 150);
    CHECK(st.dropped == 0);
    CHECK(st.mean_inflation > 1.8);

    std::set<std::string> ids;
    for (const auto& s : data) {
        ids.insert(s.id);
        ToyQuery q = parse_query(s.query, v);
        CHECK(verify_answer(q, s.answer, v));
        CHECK(s.trace.back() == v.end_think);
        CHECK(q.difficulty() >= gp.difficulty_min);
        CHECK(q.difficulty() <= gp.difficulty_max);
    }
    CHECK(ids.size() == 150);  // ids unique

    // same seed, same corpus; different seed, different corpus
    std::vector<Sample> again = build_dataset_synthetic(gp, 42, v);
    CHECK(again.size() == data.size());
    CHECK(again[0].trace == data[0].trace);
    std::vector<Sample> other = build_dataset_synthetic(gp, 43, v);
    bool any_diff = false;
    for (size_t i = 0; i < other.size(); i++)
        if (other[i].query != data[i].query) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("teacher-mode generation keeps only verified completions") {
    const Vocab& v = Vocab::toy();
    // a bigram grammar cannot do arithmetic: everything should be dropped,
    // but the accounting must still balance
    Rng grng(77);
    Teacher bad = Teacher::oracle(random_grammar(23, grng), v);
    GenParams gp;
    gp.n_queries = 25;
    gp.k_samples = 2;
    gp.teacher_max_new = 24;
    GenStats st;
    std::vector<Sample> data = build_dataset_teacher(bad, gp, 42, v, 1, &st);
    CHECK(st.requested == 25);
    CHECK(st.kept == data.size());
    CHECK(st.kept + st.dropped == st.requested);
    size_t attempted = 0;
    for (auto [d, n] : st.attempted_per_difficulty) attempted += n;
    CHECK(attempted == 25);
    for (const auto& s : data) {
        ToyQuery q = parse_query(s.query, v);
        CHECK(verify_answer(q, s.answer, v));  // whatever survived is correct
        CHECK(s.trace.back() == v.end_think);
    }
}

TEST_CASE("partition splits by rounded fraction, disjointly, seed-stably") {
    const Vocab& v = Vocab::toy();
    GenParams gp;
    gp.n_queries = 200;
    std::vector<Sample> data = build_dataset_synthetic(gp, 1, v);

    DatasetSplit sp = partition(data, 0.42, 7);
    CHECK(sp.d_rl.size() == 84);  // round(0.42 * 200)
    CHECK(sp.d_sft.size() == 116);

    std::set<std::string> rl_ids, sft_ids;
    for (const auto& s : sp.d_rl) rl_ids.insert(s.id);
    for (const auto& s : sp.d_sft) sft_ids.insert(s.id);
    CHECK(rl_ids.size() == 84);
    CHECK(sft_ids.size() == 116);
    for (const auto& id : rl_ids) CHECK(sft_ids.count(id) == 0);

    DatasetSplit sp2 = partition(data, 0.42, 7);
    CHECK(sp2.d_rl[0].id == sp.d_rl[0].id);
    CHECK(sp2.d_sft[0].id == sp.d_sft[0].id);

    // the documented large-scale split: 15,500 at 0.42 -> 6,510 / 8,990
    CHECK((size_t)std::llround(0.42 * 15500) == 6510);
}

TEST_CASE("compression: caps, flags, stats, and greedy determinism") {
    const Vocab& v = Vocab::toy();
    GenParams gp;
    gp.n_queries = 30;
    std::vector<Sample> data = build_dataset_synthetic(gp, 5, v);
    // short max_len forces some contexts to overflow the decode budget
    Model policy = micro_model(3, micro_config(23, 16, 1, 2, 48));
    DecodeParams dp{0.0, 12};
    CompressStats st;
    std::vector<CompressedSample> out = compress_dataset(policy, data, dp, v, 1, &st);
    REQUIRE(out.size() == data.size());
    CHECK(st.n == data.size());
    CHECK(st.flagged <= st.n);
    // flagged samples keep the original trace, which ends with <end_think>,
    // so they count toward terminated as well
    CHECK(st.terminated >= st.flagged);
    CHECK(st.terminated <= st.n);

    size_t flagged = 0;
    for (size_t i = 0; i < out.size(); i++) {
        CHECK(out[i].id == data[i].id);
        CHECK(out[i].source_trace_len == data[i].trace.size());
        if (out[i].flagged) {
            flagged++;
            CHECK(out[i].compressed_trace == data[i].trace);  // kept verbatim
        } else {
            CHECK(out[i].compressed_trace.size() <= 12);
        }
    }
    CHECK(flagged == st.flagged);
    CHECK(flagged > 0);  // the 48-token window does overflow on this corpus

    // deterministic independent of worker count (no sampling involved)
    std::vector<CompressedSample> out2 = compress_dataset(policy, data, dp, v, 3);
    REQUIRE(out2.size() == out.size());
    for (size_t i = 0; i < out.size(); i++) {
        CHECK(out2[i].compressed_trace == out[i].compressed_trace);
        CHECK(out2[i].flagged == out[i].flagged);
    }
}

TEST_CASE("regeneration keeps exact answers, drops wrong ones, skips flags") {
    const Vocab& v = Vocab::toy();
    // memorize two (query + compressed trace -> answer) continuations
    ToyQuery q1 = parse_query(v.encode_text("4 2 + 7 9 ?"), v);   // 21
    ToyQuery q2 = parse_query(v.encode_text("3 * 5 ?"), v);       // 15
    Sample s1{"a", query_tokens(q1, v), minimal_trace(q1, v), answer_of(q1, v)};
    Sample s2{"b", query_tokens(q2, v), minimal_trace(q2, v), answer_of(q2, v)};

    Model tm(micro_config(23, 32, 2, 2, 64));
    {
        Rng rng(1);
        init_weights(tm, rng);
    }
    std::vector<SeqPair> pairs;
    for (const auto& s : {s1, s2}) {
        SeqPair sp;
        sp.ctx = s.query;
        sp.ctx.insert(sp.ctx.end(), s.trace.begin(), s.trace.end());
        sp.tgt = s.answer;
        pairs.push_back(sp);
    }
    double final_loss = memorize(tm, pairs, 500, 5e-3);
    REQUIRE(final_loss < 0.01);
    Teacher teacher = Teacher::local(tm, v);

    auto to_compressed = [&](const Sample& s, bool flagged) {
        CompressedSample cs;
        cs.id = s.id;
        cs.query = s.query;
        cs.trace = s.trace;
        cs.answer = s.answer;
        cs.compressed_trace = s.trace;  // "compression" that kept everything
        cs.source_trace_len = s.trace.size();
        cs.flagged = flagged;
        return cs;
    };
    CompressedSample c1 = to_compressed(s1, false);
    CompressedSample c2 = to_compressed(s2, false);
    CompressedSample c3 = to_compressed(s1, true);
    c3.id = "c";
    // a sample the teacher was never trained on: completion will not verify
    ToyQuery q4 = parse_query(v.encode_text("8 8 + 8 8 ?"), v);
    CompressedSample c4;
    c4.id = "d";
    c4.query = query_tokens(q4, v);
    c4.trace = minimal_trace(q4, v);
    c4.answer = answer_of(q4, v);
    c4.compressed_trace = c4.trace;
    c4.source_trace_len = c4.trace.size();

    DecodeParams dp{0.0, 8};
    RegenStats st;
    std::vector<Sample> out = regenerate(teacher, {c1, c2, c3, c4}, dp, 99, v, 1, &st);
    CHECK(st.in == 4);
    CHECK(st.skipped_flagged == 1);
    CHECK(st.kept == 2);
    CHECK(st.dropped == 1);
    CHECK(st.retention == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == "a");
    CHECK(out[0].trace == c1.compressed_trace);  // the compressed trace is the new trace
    CHECK(verify_answer(q1, out[0].answer, v));
    CHECK(out[1].id == "b");
}

TEST_CASE("sft defaults to 6 epochs") { CHECK(SftOptions{}.epochs == 6); }

TEST_CASE("sft drives the loss down across epochs") {
    const Vocab& v = Vocab::toy();
    GenParams gp;
    gp.n_queries = 24;
    std::vector<Sample> data = build_dataset_synthetic(gp, 11, v);
    Model student = micro_model(31, micro_config(23, 32, 2, 2, 128));
    SftOptions opts;
    opts.epochs = 60;
    opts.lr = 5e-3;
    opts.batch = 8;
    opts.seed = 5;
    SftResult res = sft(student, data, opts, v);
    REQUIRE(res.epoch_losses.size() == 60);
    CHECK(res.epoch_losses[0] > res.epoch_losses.back());
    CHECK(res.epoch_losses.back() < 1.0);  // well under the ~3.1 uniform floor
}
