#pragma once
// Synthetic arithmetic-chain corpus. A query is a left-to-right chain of
// + / * over small integers, evaluated mod 100. The minimal trace spells
// out each partial result once; inject_redundancy pads it with re-checks,
// filler words and query restatements to imitate a verbose reasoner.

#include <cstdint>
#include <vector>

#include "conmax/rng.hpp"
#include "conmax/vocab.hpp"

namespace conmax {

enum class ToyOp { add, mul };

struct ToyQuery {
    std::vector<int> operands;  // 2..8 values in [0, operand_max]
    std::vector<ToyOp> ops;     // operands.size() - 1 entries
    int difficulty() const { return (int)operands.size(); }
};

struct QueryGenParams {
    int operand_max = 30;     // range for the first operand and add operands
    double mul_prob = 0.35;   // chance each step is a multiplication
    int mul_operand_max = 9;  // multiplications use small right operands
    void validate() const;
};

struct RedundancyParams {
    double dup_step_prob = 0.55;    // re-check a step verbatim
    double filler_run_prob = 0.32;  // insert a run of filler words
    int filler_run_len = 4;
    double restate_query_prob = 0.33;  // restate the whole query mid-trace
    void validate() const;
};

ToyQuery gen_query(Rng& rng, int difficulty, const QueryGenParams& params = {});

// Left-to-right evaluation mod 100; partial_results[i] is the value after
// applying ops[i].
int evaluate_query(const ToyQuery& q);
std::vector<int> partial_results(const ToyQuery& q);

// "a1 op a2 ... an ?" with numbers rendered digit-wise.
std::vector<int> query_tokens(const ToyQuery& q, const Vocab& v);
ToyQuery parse_query(const std::vector<int>& ids, const Vocab& v);

// "a1 op a2 = p1 ; p1 op a3 = p2 ; ... <end_think>"
std::vector<int> minimal_trace(const ToyQuery& q, const Vocab& v);

// "<ans> digits <eos>"
std::vector<int> answer_of(const ToyQuery& q, const Vocab& v);

// Exact match against the canonical marked answer: anything malformed,
// unmarked, padded or with stray leading zeros fails.
bool verify_answer(const ToyQuery& q, const std::vector<int>& candidate, const Vocab& v);

// Expands a step-structured trace. The output always contains the input as
// a subsequence, and equals it exactly when no insertion fires.
std::vector<int> inject_redundancy(const std::vector<int>& trace, const RedundancyParams& params,
                                   Rng& rng, const Vocab& v);

}  // namespace conmax
