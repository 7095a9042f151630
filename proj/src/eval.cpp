#include "conmax/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "conmax/parallel.hpp"
#include "json.hpp"

namespace conmax {

static constexpr uint64_t kEvalTag = 0x6576616cull;

EvalReport evaluate(const Model& student, const std::vector<ToyQuery>& queries,
                    const DecodeParams& dp, const std::vector<int>& budgets, int n_runs,
                    uint64_t seed, const Vocab& v, int workers, int bin_width,
                    std::vector<EvalRecord>* raw) {
    if (queries.empty()) throw std::invalid_argument("evaluate: no queries");
    if (n_runs < 1) throw std::invalid_argument("evaluate: n_runs must be >= 1");
    if (bin_width < 1) throw std::invalid_argument("evaluate: bin_width must be >= 1");
    if (!std::is_sorted(budgets.begin(), budgets.end()))
        throw std::invalid_argument("evaluate: budgets must be sorted ascending");

    size_t n_pairs = queries.size() * (size_t)n_runs;
    std::vector<EvalRecord> recs(n_pairs);
    parallel_for(n_pairs, workers, [&](size_t i) {
        size_t qi = i / (size_t)n_runs;
        int run = (int)(i % (size_t)n_runs);
        const ToyQuery& q = queries[qi];
        std::vector<int> ctx = query_tokens(q, v);
        Rng rng(mix_seed(seed, kEvalTag, (uint64_t)qi, (uint64_t)run));
        SampleResult gen = sample_tokens(student, ctx, dp.temperature, dp.max_new, v.eos, rng);
        EvalRecord& r = recs[i];
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "e%05zu", qi);
        r.query_id = idbuf;
        r.run = run;
        r.generated_len = (int)gen.tokens.size();
        auto it = std::find(gen.tokens.begin(), gen.tokens.end(), v.ans);
        if (it != gen.tokens.end()) {
            std::vector<int> cand(it, gen.tokens.end());
            r.correct = verify_answer(q, cand, v);
        }
    });

    EvalReport rep;
    rep.n_queries = queries.size();
    rep.n_runs = (size_t)n_runs;
    rep.seed = seed;
    rep.temperature = dp.temperature;
    rep.max_new = dp.max_new;
    rep.bin_width = bin_width;
    std::vector<int> correct_lens;
    size_t n_correct = 0;
    double len_sum = 0.0;
    for (const auto& r : recs) {
        len_sum += r.generated_len;
        if (r.correct) {
            n_correct++;
            correct_lens.push_back(r.generated_len);
        }
    }
    rep.accuracy = (double)n_correct / (double)n_pairs;
    rep.mean_tokens = len_sum / (double)n_pairs;
    for (int b : budgets) {
        size_t ok = 0;
        for (const auto& r : recs)
            if (r.correct && r.generated_len <= b) ok++;
        rep.acc_at_budget.push_back({b, (double)ok / (double)n_pairs});
    }
    rep.length_histogram = length_histogram(correct_lens, bin_width);
    if (raw) *raw = std::move(recs);
    return rep;
}

double compression_rate(double baseline_mean_tokens, double candidate_mean_tokens) {
    if (!(baseline_mean_tokens > 0.0))
        throw std::invalid_argument("compression_rate: baseline must be > 0");
    return (baseline_mean_tokens - candidate_mean_tokens) / baseline_mean_tokens;
}

std::vector<std::pair<int, int>> length_histogram(const std::vector<int>& lengths,
                                                  int bin_width) {
    if (bin_width < 1) throw std::invalid_argument("length_histogram: bin width must be >= 1");
    std::vector<std::pair<int, int>> out;
    if (lengths.empty()) return out;
    int max_len = *std::max_element(lengths.begin(), lengths.end());
    out.resize((size_t)(max_len / bin_width) + 1);
    for (size_t b = 0; b < out.size(); b++) out[b] = {(int)b * bin_width, 0};
    for (int l : lengths) {
        if (l < 0) throw std::invalid_argument("length_histogram: negative length");
        out[(size_t)(l / bin_width)].second++;
    }
    return out;
}

void emit_report_json(const EvalReport& r, const std::string& path) {
    nlohmann::ordered_json j;
    j["accuracy"] = r.accuracy;
    j["mean_tokens"] = r.mean_tokens;
    if (r.has_compression_rate) {
        j["compression_rate"] = r.compression_rate;
        j["baseline"] = r.baseline;
    } else {
        j["compression_rate"] = nullptr;
    }
    auto& ab = j["acc_at_budget"] = nlohmann::ordered_json::object();
    for (auto [budget, acc] : r.acc_at_budget) ab[std::to_string(budget)] = acc;
    auto& h = j["length_histogram"] = nlohmann::ordered_json::array();
    for (auto [lo, count] : r.length_histogram) h.push_back({lo, count});
    j["n_queries"] = r.n_queries;
    j["n_runs"] = r.n_runs;
    j["seed"] = r.seed;
    j["temperature"] = r.temperature;
    j["max_new"] = r.max_new;
    j["bin_width"] = r.bin_width;
    j["pooled_runs"] = r.pooled_runs;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

EvalReport load_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": invalid JSON: " + e.what());
    }
    EvalReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.mean_tokens = j.at("mean_tokens").get<double>();
    if (j.contains("compression_rate") && !j.at("compression_rate").is_null()) {
        r.has_compression_rate = true;
        r.compression_rate = j.at("compression_rate").get<double>();
        if (j.contains("baseline")) r.baseline = j.at("baseline").get<std::string>();
    }
    std::vector<std::pair<int, double>> ab;
    for (auto it = j.at("acc_at_budget").begin(); it != j.at("acc_at_budget").end(); ++it)
        ab.push_back({std::stoi(it.key()), it.value().get<double>()});
    std::sort(ab.begin(), ab.end());
    r.acc_at_budget = std::move(ab);
    for (const auto& pair : j.at("length_histogram"))
        r.length_histogram.push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
    r.n_queries = j.at("n_queries").get<size_t>();
    r.n_runs = j.at("n_runs").get<size_t>();
    r.seed = j.at("seed").get<uint64_t>();
    r.temperature = j.at("temperature").get<double>();
    r.max_new = j.at("max_new").get<int>();
    r.bin_width = j.at("bin_width").get<int>();
    r.pooled_runs = j.at("pooled_runs").get<bool>();
    return r;
}

void emit_report_csv(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "metric,value\n";
    out << "accuracy," << r.accuracy << '\n';
    out << "mean_tokens," << r.mean_tokens << '\n';
    if (r.has_compression_rate) out << "compression_rate," << r.compression_rate << '\n';
    out << "n_queries," << r.n_queries << '\n';
    out << "n_runs," << r.n_runs << '\n';
    out << '\n';
    out << "budget,accuracy\n";
    for (auto [budget, acc] : r.acc_at_budget) out << budget << ',' << acc << '\n';
    out << '\n';
    out << "bin_lo,count\n";
    for (auto [lo, count] : r.length_histogram) out << lo << ',' << count << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

void save_eval_records(const std::vector<EvalRecord>& recs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& r : recs) {
        nlohmann::ordered_json j;
        j["query_id"] = r.query_id;
        j["run"] = r.run;
        j["generated_len"] = r.generated_len;
        j["correct"] = r.correct;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<EvalRecord> load_eval_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open records: " + path);
    std::vector<EvalRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                     ": invalid JSON: " + e.what());
        }
        EvalRecord r;
        r.query_id = j.at("query_id").get<std::string>();
        r.run = j.at("run").get<int>();
        r.generated_len = j.at("generated_len").get<int>();
        r.correct = j.at("correct").get<bool>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace conmax
