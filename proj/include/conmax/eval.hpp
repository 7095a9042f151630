#pragma once
// Student evaluation: accuracy, mean generated tokens, accuracy within token
// budgets (pooled over (query, run) pairs), and a length histogram of the
// correct generations. Raw per-pair records are always kept so every
// aggregate can be re-derived.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "conmax/model.hpp"
#include "conmax/teacher.hpp"
#include "conmax/toycorpus.hpp"
#include "conmax/vocab.hpp"

namespace conmax {

struct EvalRecord {
    std::string query_id;
    int run = 0;
    int generated_len = 0;
    bool correct = false;
};

struct EvalReport {
    double accuracy = 0.0;
    double mean_tokens = 0.0;
    bool has_compression_rate = false;
    double compression_rate = 0.0;
    std::string baseline;  // names the baseline report when rate is set
    std::vector<std::pair<int, double>> acc_at_budget;   // ascending budgets
    std::vector<std::pair<int, int>> length_histogram;   // (bin lower bound, count)
    size_t n_queries = 0;
    size_t n_runs = 0;
    // provenance so reruns are auditable
    uint64_t seed = 0;
    double temperature = 0.0;
    int max_new = 0;
    int bin_width = 0;
    bool pooled_runs = true;  // budget stats pool all (query, run) pairs
};

// Generates trace+answer per (query, run) pair with per-pair seeds, counts
// generated tokens, and checks the answer (the suffix from the first <ans>)
// against the exact expected answer. budgets must be sorted ascending.
EvalReport evaluate(const Model& student, const std::vector<ToyQuery>& queries,
                    const DecodeParams& dp, const std::vector<int>& budgets, int n_runs,
                    uint64_t seed, const Vocab& v, int workers = 1, int bin_width = 8,
                    std::vector<EvalRecord>* raw = nullptr);

// (baseline - candidate) / baseline
double compression_rate(double baseline_mean_tokens, double candidate_mean_tokens);

// Fixed-width bins from 0 through the max length; counts sum to the input.
std::vector<std::pair<int, int>> length_histogram(const std::vector<int>& lengths,
                                                  int bin_width);

void emit_report_json(const EvalReport& r, const std::string& path);
EvalReport load_report_json(const std::string& path);
void emit_report_csv(const EvalReport& r, const std::string& path);

void save_eval_records(const std::vector<EvalRecord>& recs, const std::string& path);
std::vector<EvalRecord> load_eval_records(const std::string& path);

}  // namespace conmax
