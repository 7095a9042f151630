#pragma once
// HTTP scoring server exposing a LocalModel teacher on /v1/score and
// /v1/complete (JSON over token strings), so reward scoring can run on a
// different machine from training.

#include <memory>
#include <string>

#include "conmax/model.hpp"
#include "conmax/vocab.hpp"

namespace conmax {

class TeacherServer {
  public:
    TeacherServer(Model m, const Vocab& v);
    ~TeacherServer();

    // Binds (port 0 = any free port) and serves on a background thread;
    // returns the bound port. Used by tests and programmatic callers.
    int start(const std::string& host, int port);
    void stop();

    // Foreground serving for the CLI; blocks until the process is killed.
    void run(const std::string& host, int port);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace conmax
