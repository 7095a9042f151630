#pragma once
// Frozen teacher used for scoring and completion. Three interchangeable
// backends: a local model checkpoint, a bigram grammar with exactly known
// probabilities (the test oracle), and a remote HTTP scoring server.
// All scores are per-token average log-probabilities.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "conmax/model.hpp"
#include "conmax/vocab.hpp"

namespace conmax {

// Row-stochastic bigram table: table[prev * V + next] = p(next | prev).
struct OracleGrammar {
    int vocab_size = 0;
    std::vector<double> table;

    void validate() const;  // rows must sum to 1 within 1e-12
    double logprob(int prev, int next) const;
};

// Uniform grammar (every row 1/V), handy as a known-entropy teacher.
OracleGrammar uniform_grammar(int vocab_size);

struct RemoteConfig {
    std::string host = "127.0.0.1";
    int port = 8791;
    int retries = 3;          // re-attempts after the first try
    double backoff_s = 0.25;  // doubles per retry
    double timeout_s = 10.0;
    int max_inflight = 8;
};

struct DecodeParams {
    double temperature = 1.0;
    int max_new = 64;
};

class Teacher {
  public:
    static Teacher local(Model m, const Vocab& v);
    static Teacher oracle(OracleGrammar g, const Vocab& v);
    static Teacher remote(RemoteConfig rc, const Vocab& v);

    // log p(cont[i] | ctx, cont[<i]) for each continuation token.
    std::vector<double> token_logprobs(const std::vector<int>& ctx,
                                       const std::vector<int>& cont) const;

    // Mean log-prob of the answer tokens given query + trace.
    double score_answer(const std::vector<int>& query, const std::vector<int>& trace,
                        const std::vector<int>& answer) const;

    // Mean log-prob of the trace tokens given the query alone.
    double score_thinking(const std::vector<int>& query, const std::vector<int>& trace) const;

    // Mean log-prob of the whole trace-then-answer continuation given the
    // query (answer_first flips the concatenation order).
    double score_marginal(const std::vector<int>& query, const std::vector<int>& trace,
                          const std::vector<int>& answer, bool answer_first = false) const;

    // {score_thinking, score_answer} from a single scoring pass. Matches the
    // two separate calls bit for bit; exists so the training loop (and the
    // remote backend) pays for one request instead of two.
    std::pair<double, double> score_pair(const std::vector<int>& query,
                                         const std::vector<int>& trace,
                                         const std::vector<int>& answer) const;

    // Greedy-or-sampled continuation of a token prefix; stops at <eos> or
    // max_new tokens, whichever comes first. Deterministic in (inputs, seed).
    std::vector<int> complete(const std::vector<int>& prefix, const DecodeParams& dp,
                              uint64_t seed) const;

    const Vocab& vocab() const { return *vocab_; }
    const Model* local_model() const { return has_model_ ? &model_ : nullptr; }

  private:
    Teacher() = default;
    const Vocab* vocab_ = nullptr;
    bool has_model_ = false, has_grammar_ = false, has_remote_ = false;
    Model model_;
    OracleGrammar grammar_;
    RemoteConfig remote_;
};

}  // namespace conmax
