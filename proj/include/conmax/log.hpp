#pragma once
// Logging to stderr, gated by the CONMAX_LOG environment variable:
// error (default), info, debug.

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace conmax {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("CONMAX_LOG");
        if (!e) return LogLevel::error;
        if (std::strcmp(e, "debug") == 0) return LogLevel::debug;
        if (std::strcmp(e, "info") == 0) return LogLevel::info;
        return LogLevel::error;
    }();
    return lvl;
}

inline void log_at(LogLevel lvl, const char* tag, const char* fmt, va_list ap) {
    if (log_level() < lvl) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, ap);
    std::fputc('\n', stderr);
}

inline void log_error(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::error, "error", fmt, ap);
    va_end(ap);
}

inline void log_info(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::info, "info", fmt, ap);
    va_end(ap);
}

inline void log_debug(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::debug, "debug", fmt, ap);
    va_end(ap);
}

}  // namespace conmax
