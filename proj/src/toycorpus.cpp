#include "conmax/toycorpus.hpp"

#include <stdexcept>

namespace conmax {

static constexpr int kModulus = 100;

void QueryGenParams::validate() const {
    if (operand_max < 0 || operand_max > 99)
        throw std::invalid_argument("operand_max must be in [0, 99]");
    if (mul_operand_max < 0 || mul_operand_max > 99)
        throw std::invalid_argument("mul_operand_max must be in [0, 99]");
    if (mul_prob < 0.0 || mul_prob > 1.0)
        throw std::invalid_argument("mul_prob must be in [0, 1]");
}

void RedundancyParams::validate() const {
    auto unit = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument(std::string(name) + " must be in [0, 1]");
    };
    unit(dup_step_prob, "dup_step_prob");
    unit(filler_run_prob, "filler_run_prob");
    unit(restate_query_prob, "restate_query_prob");
    if (filler_run_len < 1) throw std::invalid_argument("filler_run_len must be >= 1");
}

ToyQuery gen_query(Rng& rng, int difficulty, const QueryGenParams& params) {
    if (difficulty < 2 || difficulty > 8)
        throw std::invalid_argument("difficulty must be in [2, 8], got " +
                                    std::to_string(difficulty));
    params.validate();
    ToyQuery q;
    q.operands.push_back((int)rng.below((uint64_t)params.operand_max + 1));
    for (int i = 1; i < difficulty; i++) {
        ToyOp op = rng.bernoulli(params.mul_prob) ? ToyOp::mul : ToyOp::add;
        int bound = op == ToyOp::mul ? params.mul_operand_max : params.operand_max;
        q.ops.push_back(op);
        q.operands.push_back((int)rng.below((uint64_t)bound + 1));
    }
    return q;
}

static int apply(int acc, ToyOp op, int rhs) {
    long long r = op == ToyOp::add ? (long long)acc + rhs : (long long)acc * rhs;
    return (int)(r % kModulus);
}

int evaluate_query(const ToyQuery& q) {
    if (q.operands.size() < 2 || q.ops.size() + 1 != q.operands.size())
        throw std::invalid_argument("malformed query");
    int acc = q.operands[0];
    for (size_t i = 0; i < q.ops.size(); i++) acc = apply(acc, q.ops[i], q.operands[i + 1]);
    return acc;
}

std::vector<int> partial_results(const ToyQuery& q) {
    if (q.operands.size() < 2 || q.ops.size() + 1 != q.operands.size())
        throw std::invalid_argument("malformed query");
    std::vector<int> out;
    int acc = q.operands[0];
    for (size_t i = 0; i < q.ops.size(); i++) {
        acc = apply(acc, q.ops[i], q.operands[i + 1]);
        out.push_back(acc);
    }
    return out;
}

static void push_number(std::vector<int>& out, int value, const Vocab& v) {
    for (int d : v.number_tokens(value)) out.push_back(d);
}

std::vector<int> query_tokens(const ToyQuery& q, const Vocab& v) {
    std::vector<int> out;
    push_number(out, q.operands[0], v);
    for (size_t i = 0; i < q.ops.size(); i++) {
        out.push_back(q.ops[i] == ToyOp::add ? v.plus : v.times);
        push_number(out, q.operands[i + 1], v);
    }
    out.push_back(v.question);
    return out;
}

ToyQuery parse_query(const std::vector<int>& ids, const Vocab& v) {
    ToyQuery q;
    size_t i = 0;
    auto read_number = [&]() -> int {
        if (i >= ids.size() || !v.is_digit(ids[i]))
            throw std::invalid_argument("parse_query: expected a number");
        int val = ids[i++];
        if (i < ids.size() && v.is_digit(ids[i])) {
            if (val == 0) throw std::invalid_argument("parse_query: leading zero");
            val = val * 10 + ids[i++];
        }
        if (i < ids.size() && v.is_digit(ids[i]))
            throw std::invalid_argument("parse_query: number too long");
        return val;
    };
    q.operands.push_back(read_number());
    while (i < ids.size() && ids[i] != v.question) {
        if (ids[i] == v.plus) q.ops.push_back(ToyOp::add);
        else if (ids[i] == v.times) q.ops.push_back(ToyOp::mul);
        else throw std::invalid_argument("parse_query: expected an operator");
        i++;
        q.operands.push_back(read_number());
    }
    if (i + 1 != ids.size() || ids[i] != v.question)
        throw std::invalid_argument("parse_query: expected trailing \"?\"");
    if (q.operands.size() < 2 || q.operands.size() > 8)
        throw std::invalid_argument("parse_query: operand count out of range");
    return q;
}

std::vector<int> minimal_trace(const ToyQuery& q, const Vocab& v) {
    std::vector<int> partials = partial_results(q);
    std::vector<int> out;
    int lhs = q.operands[0];
    for (size_t i = 0; i < q.ops.size(); i++) {
        if (i) out.push_back(v.semi);
        push_number(out, lhs, v);
        out.push_back(q.ops[i] == ToyOp::add ? v.plus : v.times);
        push_number(out, q.operands[i + 1], v);
        out.push_back(v.equals);
        push_number(out, partials[i], v);
        lhs = partials[i];
    }
    out.push_back(v.end_think);
    return out;
}

std::vector<int> answer_of(const ToyQuery& q, const Vocab& v) {
    std::vector<int> out;
    out.push_back(v.ans);
    push_number(out, evaluate_query(q), v);
    out.push_back(v.eos);
    return out;
}

bool verify_answer(const ToyQuery& q, const std::vector<int>& candidate, const Vocab& v) {
    return candidate == answer_of(q, v);
}

// --- redundancy injection ---

namespace {

// One "lhs op rhs = res" step plus the structure around it.
struct TraceStep {
    std::vector<int> tokens;
    int rhs = 0;
    ToyOp op = ToyOp::add;
};

// Split a step-structured trace back into steps; throws on anything else.
std::vector<TraceStep> split_steps(const std::vector<int>& trace, const Vocab& v, int* first_lhs) {
    if (trace.empty() || trace.back() != v.end_think)
        throw std::invalid_argument("inject_redundancy: trace must end with <end_think>");
    std::vector<TraceStep> steps;
    size_t i = 0;
    size_t end = trace.size() - 1;
    auto read_number = [&]() -> int {
        if (i >= end || !v.is_digit(trace[i]))
            throw std::invalid_argument("inject_redundancy: expected a number in trace");
        int val = trace[i++];
        if (i < end && v.is_digit(trace[i])) val = val * 10 + trace[i++];
        return val;
    };
    bool first = true;
    while (i < end) {
        if (!first) {
            if (trace[i] != v.semi)
                throw std::invalid_argument("inject_redundancy: expected \";\" between steps");
            i++;
        }
        TraceStep st;
        size_t start = i;
        int lhs = read_number();
        if (first && first_lhs) *first_lhs = lhs;
        if (i >= end || (trace[i] != v.plus && trace[i] != v.times))
            throw std::invalid_argument("inject_redundancy: expected an operator in trace");
        st.op = trace[i] == v.plus ? ToyOp::add : ToyOp::mul;
        i++;
        st.rhs = read_number();
        if (i >= end || trace[i] != v.equals)
            throw std::invalid_argument("inject_redundancy: expected \"=\" in trace");
        i++;
        read_number();
        st.tokens.assign(trace.begin() + start, trace.begin() + i);
        steps.push_back(std::move(st));
        first = false;
    }
    if (steps.empty()) throw std::invalid_argument("inject_redundancy: no steps in trace");
    return steps;
}

}  // namespace

std::vector<int> inject_redundancy(const std::vector<int>& trace, const RedundancyParams& params,
                                   Rng& rng, const Vocab& v) {
    params.validate();
    int first_lhs = 0;
    std::vector<TraceStep> steps = split_steps(trace, v, &first_lhs);

    // Rebuild the query the trace answers, for restatements.
    ToyQuery q;
    q.operands.push_back(first_lhs);
    for (const auto& st : steps) {
        q.ops.push_back(st.op);
        q.operands.push_back(st.rhs);
    }
    std::vector<int> restate = query_tokens(q, v);

    std::vector<int> out;
    auto filler_run = [&] {
        out.push_back(v.semi);
        for (int k = 0; k < params.filler_run_len; k++)
            out.push_back(rng.below(2) == 0 ? v.so : v.again);
    };

    // Leading hedge before the first step, e.g. "; so again ..." minus the
    // leading ";" (it opens the trace).
    if (rng.bernoulli(params.filler_run_prob)) {
        for (int k = 0; k < params.filler_run_len; k++)
            out.push_back(rng.below(2) == 0 ? v.so : v.again);
        out.push_back(v.semi);
    }

    for (size_t s = 0; s < steps.size(); s++) {
        if (s) out.push_back(v.semi);
        out.insert(out.end(), steps[s].tokens.begin(), steps[s].tokens.end());
        if (rng.bernoulli(params.dup_step_prob)) {
            out.push_back(v.semi);
            out.push_back(v.check);
            out.insert(out.end(), steps[s].tokens.begin(), steps[s].tokens.end());
        }
        if (rng.bernoulli(params.filler_run_prob)) filler_run();
        if (rng.bernoulli(params.restate_query_prob)) {
            out.push_back(v.semi);
            out.push_back(v.so);
            out.insert(out.end(), restate.begin(), restate.end());
        }
        if (rng.bernoulli(params.filler_run_prob)) filler_run();
    }
    out.push_back(v.end_think);
    return out;
}

}  // namespace conmax
