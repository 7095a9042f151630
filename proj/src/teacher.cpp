#include "conmax/teacher.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "conmax/log.hpp"
#include "httplib.h"
#include "json.hpp"

namespace conmax {

void OracleGrammar::validate() const {
    if (vocab_size < 1) throw std::invalid_argument("grammar: vocab_size must be positive");
    if (table.size() != (size_t)vocab_size * vocab_size)
        throw std::invalid_argument("grammar: table must be vocab_size^2 entries");
    for (int r = 0; r < vocab_size; r++) {
        double sum = 0.0;
        for (int c = 0; c < vocab_size; c++) {
            double p = table[(size_t)r * vocab_size + c];
            if (!(p >= 0.0)) throw std::invalid_argument("grammar: negative probability");
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("grammar: row " + std::to_string(r) +
                                        " sums to " + std::to_string(sum) + ", expected 1");
    }
}

double OracleGrammar::logprob(int prev, int next) const {
    if (prev < 0 || prev >= vocab_size || next < 0 || next >= vocab_size)
        throw std::invalid_argument("grammar: token id out of range");
    return std::log(table[(size_t)prev * vocab_size + next]);
}

OracleGrammar uniform_grammar(int vocab_size) {
    OracleGrammar g;
    g.vocab_size = vocab_size;
    g.table.assign((size_t)vocab_size * vocab_size, 1.0 / vocab_size);
    return g;
}

Teacher Teacher::local(Model m, const Vocab& v) {
    if (m.cfg.vocab_size != v.size())
        throw std::invalid_argument("teacher model vocab size does not match vocabulary");
    Teacher t;
    t.vocab_ = &v;
    t.has_model_ = true;
    t.model_ = std::move(m);
    return t;
}

Teacher Teacher::oracle(OracleGrammar g, const Vocab& v) {
    g.validate();
    if (g.vocab_size != v.size())
        throw std::invalid_argument("grammar vocab size does not match vocabulary");
    Teacher t;
    t.vocab_ = &v;
    t.has_grammar_ = true;
    t.grammar_ = std::move(g);
    return t;
}

Teacher Teacher::remote(RemoteConfig rc, const Vocab& v) {
    Teacher t;
    t.vocab_ = &v;
    t.has_remote_ = true;
    t.remote_ = std::move(rc);
    return t;
}

// --- remote plumbing ---

// POSTs with retry on transport errors and 5xx; 4xx is a caller bug and
// surfaces immediately with the server's message.
static nlohmann::json remote_post(const RemoteConfig& rc, const std::string& path,
                                  const nlohmann::json& body) {
    std::string payload = body.dump();
    std::string last_err;
    for (int attempt = 0; attempt <= rc.retries; attempt++) {
        if (attempt > 0) {
            double delay = rc.backoff_s * std::pow(2.0, attempt - 1);
            log_debug("remote teacher retry %d after %.2fs: %s", attempt, delay,
                      last_err.c_str());
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        httplib::Client cli(rc.host, rc.port);
        cli.set_connection_timeout(std::chrono::duration<double>(rc.timeout_s));
        cli.set_read_timeout(std::chrono::duration<double>(rc.timeout_s));
        auto res = cli.Post(path, payload, "application/json");
        if (!res) {
            last_err = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_err = "server error " + std::to_string(res->status);
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(res->body);
        } catch (const std::exception& e) {
            last_err = std::string("bad response body: ") + e.what();
            continue;
        }
        if (res->status != 200) {
            std::string msg = j.contains("error") ? j["error"].get<std::string>() : res->body;
            throw std::runtime_error("teacher server rejected " + path + ": " + msg);
        }
        return j;
    }
    throw std::runtime_error("teacher server unreachable at " + rc.host + ":" +
                             std::to_string(rc.port) + " (" + last_err + ")");
}

std::vector<double> Teacher::token_logprobs(const std::vector<int>& ctx,
                                            const std::vector<int>& cont) const {
    if (ctx.empty()) throw std::invalid_argument("teacher: empty context");
    if (cont.empty()) return {};
    if (has_model_) return conmax::token_logprobs(model_, ctx, cont);
    if (has_grammar_) {
        std::vector<double> out;
        out.reserve(cont.size());
        int prev = ctx.back();
        for (int t : cont) {
            out.push_back(grammar_.logprob(prev, t));
            prev = t;
        }
        return out;
    }
    nlohmann::json req;
    req["context"] = vocab_->decode_text(ctx);
    req["continuation"] = vocab_->decode_text(cont);
    nlohmann::json res = remote_post(remote_, "/v1/score", req);
    if (!res.contains("token_logprobs") || !res["token_logprobs"].is_array())
        throw std::runtime_error("teacher server response missing token_logprobs");
    std::vector<double> out = res["token_logprobs"].get<std::vector<double>>();
    if (out.size() != cont.size())
        throw std::runtime_error("teacher server returned wrong logprob count");
    return out;
}

static double mean(const std::vector<double>& xs, size_t lo, size_t hi) {
    double s = 0.0;
    for (size_t i = lo; i < hi; i++) s += xs[i];
    return s / (double)(hi - lo);
}

double Teacher::score_answer(const std::vector<int>& query, const std::vector<int>& trace,
                             const std::vector<int>& answer) const {
    if (answer.empty()) throw std::invalid_argument("score_answer: empty answer");
    std::vector<int> ctx = query;
    ctx.insert(ctx.end(), trace.begin(), trace.end());
    auto lp = token_logprobs(ctx, answer);
    return mean(lp, 0, lp.size());
}

double Teacher::score_thinking(const std::vector<int>& query,
                               const std::vector<int>& trace) const {
    if (trace.empty()) throw std::invalid_argument("score_thinking: empty trace");
    auto lp = token_logprobs(query, trace);
    return mean(lp, 0, lp.size());
}

double Teacher::score_marginal(const std::vector<int>& query, const std::vector<int>& trace,
                               const std::vector<int>& answer, bool answer_first) const {
    if (trace.empty() && answer.empty())
        throw std::invalid_argument("score_marginal: nothing to score");
    std::vector<int> cont;
    if (answer_first) {
        cont = answer;
        cont.insert(cont.end(), trace.begin(), trace.end());
    } else {
        cont = trace;
        cont.insert(cont.end(), answer.begin(), answer.end());
    }
    auto lp = token_logprobs(query, cont);
    return mean(lp, 0, lp.size());
}

std::pair<double, double> Teacher::score_pair(const std::vector<int>& query,
                                              const std::vector<int>& trace,
                                              const std::vector<int>& answer) const {
    if (trace.empty()) throw std::invalid_argument("score_pair: empty trace");
    if (answer.empty()) throw std::invalid_argument("score_pair: empty answer");
    std::vector<int> cont = trace;
    cont.insert(cont.end(), answer.begin(), answer.end());
    auto lp = token_logprobs(query, cont);
    // Causality makes the split exact: the first |trace| entries are the
    // same numbers score_thinking would see, the rest match score_answer.
    return {mean(lp, 0, trace.size()), mean(lp, trace.size(), lp.size())};
}

std::vector<int> Teacher::complete(const std::vector<int>& prefix, const DecodeParams& dp,
                                   uint64_t seed) const {
    if (prefix.empty()) throw std::invalid_argument("complete: empty prefix");
    if (dp.max_new < 0) throw std::invalid_argument("complete: negative max_new");
    if (has_model_) {
        Rng rng(seed);
        return sample_tokens(model_, prefix, dp.temperature, dp.max_new, vocab_->eos, rng)
            .tokens;
    }
    if (has_grammar_) {
        Rng rng(seed);
        int V = grammar_.vocab_size;
        std::vector<int> out;
        int prev = prefix.back();
        std::vector<double> w(V);
        while ((int)out.size() < dp.max_new) {
            const double* row = grammar_.table.data() + (size_t)prev * V;
            int pick;
            if (dp.temperature < 1e-6) {
                pick = 0;
                for (int j = 1; j < V; j++)
                    if (row[j] > row[pick]) pick = j;
            } else {
                for (int j = 0; j < V; j++)
                    w[j] = row[j] > 0.0 ? std::pow(row[j], 1.0 / dp.temperature) : 0.0;
                pick = (int)rng.categorical(w);
            }
            out.push_back(pick);
            prev = pick;
            if (pick == vocab_->eos) break;
        }
        return out;
    }
    nlohmann::json req;
    req["prefix"] = vocab_->decode_text(prefix);
    req["max_new"] = dp.max_new;
    req["temperature"] = dp.temperature;
    req["seed"] = seed;
    nlohmann::json res = remote_post(remote_, "/v1/complete", req);
    if (!res.contains("tokens") || !res["tokens"].is_string())
        throw std::runtime_error("teacher server response missing tokens");
    return vocab_->encode_text(res["tokens"].get<std::string>());
}

}  // namespace conmax
