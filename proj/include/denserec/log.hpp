#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace denserec::log {

enum class Level : int { error = 0, info = 1, debug = 2 };

// Level comes from DENSEREC_LOG={error,info,debug}; default info.
inline Level& level() {
    static Level lvl = [] {
        const char* env = std::getenv("DENSEREC_LOG");
        if (env == nullptr) return Level::info;
        if (std::strcmp(env, "error") == 0) return Level::error;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        return Level::info;
    }();
    return lvl;
}

template <typename... Args>
void emit(Level lvl, const char* tag, const char* fmt, Args... args) {
    if (static_cast<int>(lvl) > static_cast<int>(level())) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

template <typename... Args>
void error(const char* fmt, Args... args) {
    emit(Level::error, "error", fmt, args...);
}

template <typename... Args>
void info(const char* fmt, Args... args) {
    emit(Level::info, "info", fmt, args...);
}

template <typename... Args>
void debug(const char* fmt, Args... args) {
    emit(Level::debug, "debug", fmt, args...);
}

}  // namespace denserec::log
