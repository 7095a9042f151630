#pragma once
// Shared fixtures for the test suite: micro model configs sized so that
// full forward/backward passes and finite-difference sweeps stay fast.

#include <string>
#include <vector>

#include "conmax/model.hpp"
#include "conmax/rng.hpp"
#include "conmax/teacher.hpp"
#include "conmax/vocab.hpp"

namespace conmax::testing {

// Plain n-token vocabulary ("t0", "t1", ...) for teachers over vocabularies
// smaller than the toy one. No marker tokens, so <eos> never fires.
inline Vocab make_vocab(int n) {
    std::vector<std::string> toks;
    toks.reserve((size_t)n);
    for (int i = 0; i < n; i++) toks.push_back("t" + std::to_string(i));
    return Vocab(std::move(toks));
}

inline ModelConfig micro_config(int vocab = 12, int d = 16, int layers = 2, int heads = 2,
                                int max_len = 64) {
    ModelConfig mc;
    mc.vocab_size = vocab;
    mc.d_model = d;
    mc.n_layers = layers;
    mc.n_heads = heads;
    mc.max_len = max_len;
    return mc;
}

inline Model micro_model(uint64_t seed = 1, const ModelConfig& mc = micro_config()) {
    Model m(mc);
    Rng rng(seed);
    init_weights(m, rng);
    return m;
}

// Adam-train until the batch fits; returns the final mean cross-entropy.
inline double memorize(Model& m, const std::vector<SeqPair>& batch, int steps, double lr = 1e-2) {
    Adam opt(m.p.size(), lr);
    double loss = 0.0;
    for (int i = 0; i < steps; i++) loss = xent_step(m, opt, batch);
    return loss;
}

// 4-state bigram grammar with hand-picked rows; matches the frozen oracle
// constants used in the teacher tests. table[prev * V + next].
inline OracleGrammar tiny_grammar() {
    OracleGrammar g;
    g.vocab_size = 4;
    g.table = {
        0.1, 0.2, 0.3, 0.4,      // from 0
        0.4, 0.3, 0.2, 0.1,      // from 1
        0.25, 0.25, 0.25, 0.25,  // from 2
        0.7, 0.1, 0.1, 0.1,      // from 3
    };
    return g;
}

// Random row-stochastic grammar over `vocab` tokens.
inline OracleGrammar random_grammar(int vocab, Rng& rng) {
    OracleGrammar g;
    g.vocab_size = vocab;
    g.table.assign((size_t)vocab * vocab, 0.0);
    for (int r = 0; r < vocab; r++) {
        double* row = &g.table[(size_t)r * vocab];
        double total = 0.0;
        for (int c = 0; c < vocab; c++) {
            row[c] = 0.05 + rng.uniform();
            total += row[c];
        }
        // divide, then absorb the rounding residual into the largest entry
        // so the row sums to 1 at double precision
        for (int c = 0; c < vocab; c++) row[c] /= total;
        double s = 0.0;
        for (int c = 0; c < vocab; c++) s += row[c];
        int argmax = 0;
        for (int c = 1; c < vocab; c++)
            if (row[c] > row[argmax]) argmax = c;
        row[argmax] += 1.0 - s;
    }
    return g;
}

}  // namespace conmax::testing
