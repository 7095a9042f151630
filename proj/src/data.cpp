#include "conmax/data.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace conmax {

using ordered_json = nlohmann::ordered_json;

const char* to_string(RewardMode m) {
    switch (m) {
        case RewardMode::conmax: return "conmax";
        case RewardMode::marginal: return "marginal";
        case RewardMode::conmax_plus_len: return "conmax_plus_len";
    }
    throw std::logic_error("bad RewardMode");
}

RewardMode reward_mode_from_string(const std::string& s) {
    if (s == "conmax") return RewardMode::conmax;
    if (s == "marginal") return RewardMode::marginal;
    if (s == "conmax_plus_len") return RewardMode::conmax_plus_len;
    throw std::invalid_argument("unknown reward_mode: \"" + s + "\"");
}

void RunConfig::validate() const {
    auto bad = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (!(beta >= 0.0)) bad("beta must be >= 0");
    if (!(lambda_len >= 0.0)) bad("lambda_len must be >= 0");
    if (!(beta_kl >= 0.0)) bad("beta_kl must be >= 0");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) bad("clip_eps must be in (0, 1)");
    if (group_size < 2) bad("group_size must be >= 2");
    if (batch_queries < 1) bad("batch_queries must be >= 1");
    if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
    if (!(temperature > 0.0)) bad("temperature must be > 0");
    if (max_compressed_len < 1) bad("max_compressed_len must be >= 1");
}

// --- dataset files ---

static ordered_json sample_to_json(const Sample& s, const Vocab& v) {
    ordered_json j;
    j["id"] = s.id;
    j["query"] = v.decode_text(s.query);
    j["trace"] = v.decode_text(s.trace);
    j["answer"] = v.decode_text(s.answer);
    return j;
}

static std::string require_string(const ordered_json& j, const char* key) {
    if (!j.contains(key)) throw std::runtime_error(std::string("missing field \"") + key + "\"");
    if (!j.at(key).is_string())
        throw std::runtime_error(std::string("field \"") + key + "\" must be a string");
    return j.at(key).get<std::string>();
}

void check_sample(const Sample& s, const Vocab& v) {
    if (s.id.empty()) throw std::runtime_error("sample has empty id");
    if (s.query.empty()) throw std::runtime_error("sample " + s.id + ": empty query");
    if (s.trace.empty()) throw std::runtime_error("sample " + s.id + ": empty trace");
    for (int t : s.query)
        if (t < 0 || t >= v.size())
            throw std::runtime_error("sample " + s.id + ": query token id out of range");
    for (int t : s.trace)
        if (t < 0 || t >= v.size())
            throw std::runtime_error("sample " + s.id + ": trace token id out of range");
    answer_payload(s.answer, v);  // validates the marked-answer shape
}

std::vector<int> answer_payload(const std::vector<int>& answer, const Vocab& v) {
    if (answer.size() < 3 || answer.front() != v.ans || answer.back() != v.eos)
        throw std::runtime_error("answer must be of the form <ans> digits <eos>");
    std::vector<int> payload(answer.begin() + 1, answer.end() - 1);
    for (int t : payload)
        if (!v.is_digit(t))
            throw std::runtime_error("answer payload must contain only digit tokens");
    return payload;
}

void save_dataset(const std::vector<Sample>& samples, const std::string& path, const Vocab& v) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& s : samples) out << sample_to_json(s, v).dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Shared line-by-line JSONL reader; fn gets (parsed object, line number).
template <class Fn>
static void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                     ": invalid JSON: " + e.what());
        }
        try {
            fn(j, lineno);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::vector<Sample> load_dataset(const std::string& path, const Vocab& v) {
    std::vector<Sample> out;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](const ordered_json& j, size_t) {
        Sample s;
        s.id = require_string(j, "id");
        if (!seen.insert(s.id).second) throw std::runtime_error("duplicate id \"" + s.id + "\"");
        s.query = v.encode_text(require_string(j, "query"));
        s.trace = v.encode_text(require_string(j, "trace"));
        s.answer = v.encode_text(require_string(j, "answer"));
        check_sample(s, v);
        out.push_back(std::move(s));
    });
    return out;
}

void save_compressed(const std::vector<CompressedSample>& samples, const std::string& path,
                     const Vocab& v) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& s : samples) {
        ordered_json j;
        j["id"] = s.id;
        j["query"] = v.decode_text(s.query);
        j["trace"] = v.decode_text(s.trace);
        j["answer"] = v.decode_text(s.answer);
        j["compressed_trace"] = v.decode_text(s.compressed_trace);
        j["source_trace_len"] = s.source_trace_len;
        if (s.flagged) j["flagged"] = true;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<CompressedSample> load_compressed(const std::string& path, const Vocab& v) {
    std::vector<CompressedSample> out;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](const ordered_json& j, size_t) {
        CompressedSample s;
        s.id = require_string(j, "id");
        if (!seen.insert(s.id).second) throw std::runtime_error("duplicate id \"" + s.id + "\"");
        s.query = v.encode_text(require_string(j, "query"));
        s.trace = v.encode_text(require_string(j, "trace"));
        s.answer = v.encode_text(require_string(j, "answer"));
        s.compressed_trace = v.encode_text(require_string(j, "compressed_trace"));
        if (!j.contains("source_trace_len") || !j.at("source_trace_len").is_number_unsigned())
            throw std::runtime_error("missing or invalid \"source_trace_len\"");
        s.source_trace_len = j.at("source_trace_len").get<size_t>();
        if (j.contains("flagged")) s.flagged = j.at("flagged").get<bool>();
        out.push_back(std::move(s));
    });
    return out;
}

// --- run config files ---

RunConfig run_config_from_json_text(const std::string& text, const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error(origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error(origin + ": config must be a JSON object");
    RunConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const ordered_json& val = it.value();
        auto num = [&]() -> double {
            if (!val.is_number()) throw std::runtime_error(origin + ": \"" + key + "\" must be a number");
            return val.get<double>();
        };
        auto integer = [&]() -> long long {
            if (!val.is_number_integer())
                throw std::runtime_error(origin + ": \"" + key + "\" must be an integer");
            return val.get<long long>();
        };
        if (key == "beta") cfg.beta = num();
        else if (key == "lambda_len") cfg.lambda_len = num();
        else if (key == "beta_kl") cfg.beta_kl = num();
        else if (key == "clip_eps") cfg.clip_eps = num();
        else if (key == "group_size") cfg.group_size = (int)integer();
        else if (key == "batch_queries") cfg.batch_queries = (int)integer();
        else if (key == "learning_rate") cfg.learning_rate = num();
        else if (key == "temperature") cfg.temperature = num();
        else if (key == "max_compressed_len") cfg.max_compressed_len = (int)integer();
        else if (key == "seed") {
            if (!val.is_number_integer() && !val.is_number_unsigned())
                throw std::runtime_error(origin + ": \"seed\" must be an integer");
            cfg.seed = val.get<uint64_t>();
        } else if (key == "reward_mode") {
            if (!val.is_string()) throw std::runtime_error(origin + ": \"reward_mode\" must be a string");
            try {
                cfg.reward_mode = reward_mode_from_string(val.get<std::string>());
            } catch (const std::exception& e) {
                throw std::runtime_error(origin + ": " + e.what());
            }
        } else {
            throw std::runtime_error(origin + ": unknown config key \"" + key + "\"");
        }
    }
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(origin + ": " + e.what());
    }
    return cfg;
}

std::string run_config_to_json_text(const RunConfig& cfg) {
    ordered_json j;
    j["beta"] = cfg.beta;
    j["lambda_len"] = cfg.lambda_len;
    j["beta_kl"] = cfg.beta_kl;
    j["clip_eps"] = cfg.clip_eps;
    j["group_size"] = cfg.group_size;
    j["batch_queries"] = cfg.batch_queries;
    j["learning_rate"] = cfg.learning_rate;
    j["temperature"] = cfg.temperature;
    j["max_compressed_len"] = cfg.max_compressed_len;
    j["seed"] = cfg.seed;
    j["reward_mode"] = to_string(cfg.reward_mode);
    return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json_text(ss.str(), path);
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << run_config_to_json_text(cfg) << '\n';
}

}  // namespace conmax
