#include "conmax/serve.hpp"

#include <stdexcept>
#include <thread>

#include "conmax/log.hpp"
#include "conmax/teacher.hpp"
#include "httplib.h"
#include "json.hpp"

namespace conmax {

struct TeacherServer::Impl {
    Model model;
    const Vocab* vocab;
    httplib::Server server;
    std::thread worker;

    Impl(Model m, const Vocab& v) : model(std::move(m)), vocab(&v) { wire(); }

    static void fail(httplib::Response& res, int status, const std::string& msg) {
        nlohmann::json j;
        j["error"] = msg;
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    void wire() {
        server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"ok\":true}", "application/json");
        });
        server.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                nlohmann::json in = nlohmann::json::parse(req.body);
                std::vector<int> ctx = vocab->encode_text(in.at("context").get<std::string>());
                std::vector<int> cont =
                    vocab->encode_text(in.at("continuation").get<std::string>());
                if (ctx.empty()) throw std::invalid_argument("context must be non-empty");
                nlohmann::json out;
                out["token_logprobs"] = token_logprobs(model, ctx, cont);
                return out;
            });
        });
        server.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                nlohmann::json in = nlohmann::json::parse(req.body);
                std::vector<int> prefix = vocab->encode_text(in.at("prefix").get<std::string>());
                if (prefix.empty()) throw std::invalid_argument("prefix must be non-empty");
                DecodeParams dp;
                dp.max_new = in.at("max_new").get<int>();
                dp.temperature = in.at("temperature").get<double>();
                uint64_t seed = in.at("seed").get<uint64_t>();
                Rng rng(seed);
                SampleResult r =
                    sample_tokens(model, prefix, dp.temperature, dp.max_new, vocab->eos, rng);
                nlohmann::json out;
                out["tokens"] = vocab->decode_text(r.tokens);
                return out;
            });
        });
    }

    template <class Fn>
    static void handle(httplib::Response& res, Fn&& fn) {
        try {
            nlohmann::json out = fn();
            res.set_content(out.dump(), "application/json");
        } catch (const std::exception& e) {
            fail(res, 400, e.what());
        }
    }
};

TeacherServer::TeacherServer(Model m, const Vocab& v)
    : impl_(std::make_unique<Impl>(std::move(m), v)) {}

TeacherServer::~TeacherServer() { stop(); }

int TeacherServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound <= 0) throw std::runtime_error("cannot bind teacher server on " + host);
    } else {
        if (!impl_->server.bind_to_port(host, port))
            throw std::runtime_error("cannot bind teacher server on " + host + ":" +
                                     std::to_string(port));
    }
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    log_info("teacher server listening on %s:%d", host.c_str(), bound);
    return bound;
}

void TeacherServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

void TeacherServer::run(const std::string& host, int port) {
    if (!impl_->server.bind_to_port(host, port))
        throw std::runtime_error("cannot bind teacher server on " + host + ":" +
                                 std::to_string(port));
    log_info("teacher server listening on %s:%d", host.c_str(), port);
    impl_->server.listen_after_bind();
}

}  // namespace conmax
