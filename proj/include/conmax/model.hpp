#pragma once
// Tiny decoder-only transformer, double precision, hand-written forward and
// backward passes over flat parameter buffers. Small enough that every
// gradient can be checked against finite differences.
//
// Layout per layer: LayerNorm -> fused qkv matmul -> causal multi-head
// attention -> output projection -> residual, then LayerNorm -> 4x MLP with
// tanh-approximated GELU -> projection -> residual. Final LayerNorm feeds a
// separate (untied) output head. Learned positional embeddings.

#include <cstdint>
#include <string>
#include <vector>

#include "conmax/rng.hpp"

namespace conmax {

struct ModelConfig {
    int vocab_size = 23;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int max_len = 512;
    void validate() const;
};

// Offsets of every named tensor inside the flat parameter vector.
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    size_t offset;
    size_t size;
};

std::vector<ParamTensor> param_tensors(const ModelConfig& cfg);
size_t param_count(const ModelConfig& cfg);

struct Model {
    ModelConfig cfg;
    std::vector<double> p;

    explicit Model(const ModelConfig& c);
    Model() = default;
};

// Gaussian init (0.02 std, residual projections scaled down by depth),
// LayerNorm gains at 1.
void init_weights(Model& m, Rng& rng);

// Log-probabilities of each target token given everything before it.
// ctx must be non-empty; |ctx| + |tgt| must fit in max_len.
std::vector<double> token_logprobs(const Model& m, const std::vector<int>& ctx,
                                   const std::vector<int>& tgt);

// Full next-token log distribution at every position: out[t*V + j] is
// log p(token j | tokens[0..t]). Mostly for tests and oracles.
std::vector<double> full_logprobs(const Model& m, const std::vector<int>& tokens);

struct SampleResult {
    std::vector<int> tokens;
    std::vector<double> logprobs;  // log-prob of each emitted token at draw time
};

// Ancestral sampling with a temperature; stops after stop_token or max_new
// tokens. Temperatures below 1e-6 mean argmax (ties to the lowest id).
// Throws if |ctx| + max_new would exceed max_len.
SampleResult sample_tokens(const Model& m, const std::vector<int>& ctx, double temperature,
                           int max_new, int stop_token, Rng& rng);

// Accumulates d(sum_t w[t] * log p(tgt[t]))/dtheta into grad and returns that
// weighted sum. grad must have param_count entries; contents are added to.
double weighted_logprob_backward(const Model& m, const std::vector<int>& ctx,
                                 const std::vector<int>& tgt, const std::vector<double>& w,
                                 std::vector<double>& grad);

struct Adam {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<double> m, v;

    explicit Adam(size_t n, double lr_ = 3e-4) : lr(lr_), m(n, 0.0), v(n, 0.0) {}
};

void adam_step(Adam& opt, std::vector<double>& params, const std::vector<double>& grad);

struct SeqPair {
    std::vector<int> ctx, tgt;
};

// One Adam step on mean cross-entropy over all target tokens in the batch.
// Returns the loss. Pairs with empty targets contribute nothing; if the
// whole batch is empty the parameters are left untouched and loss is 0.
double xent_step(Model& m, Adam& opt, const std::vector<SeqPair>& batch, int workers = 1);

// Mean cross-entropy without touching the parameters.
double xent_loss(const Model& m, const std::vector<SeqPair>& batch, int workers = 1);

double grad_l2norm(const std::vector<double>& g);

// Binary checkpoint: magic, version, JSON header with config and named
// tensor shapes, then the raw little-endian doubles.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace conmax
