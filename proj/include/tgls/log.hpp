#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace tgls {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Level comes from the TGLS_LOG environment variable: error|info|debug.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("TGLS_LOG");
        if (env == nullptr) return LogLevel::kInfo;
        if (std::strcmp(env, "error") == 0) return LogLevel::kError;
        if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
        return LogLevel::kInfo;
    }();
    return level;
}

template <typename... Args>
void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
    if (lvl > log_level()) return;
    std::fprintf(stderr, "[%s] ", tag);
    if constexpr (sizeof...(Args) == 0) {
        std::fputs(fmt, stderr);
    } else {
        std::fprintf(stderr, fmt, args...);
    }
    std::fputc('\n', stderr);
}

template <typename... Args>
void log_error(const char* fmt, Args... args) {
    log_at(LogLevel::kError, "error", fmt, args...);
}
template <typename... Args>
void log_info(const char* fmt, Args... args) {
    log_at(LogLevel::kInfo, "info", fmt, args...);
}
template <typename... Args>
void log_debug(const char* fmt, Args... args) {
    log_at(LogLevel::kDebug, "debug", fmt, args...);
}

}  // namespace tgls
