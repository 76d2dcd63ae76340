#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace add {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// level comes from ADD_LOG (error|info|debug), default info. Read once.
inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* s = std::getenv("ADD_LOG");
        if (!s) return LogLevel::info;
        if (std::strcmp(s, "error") == 0) return LogLevel::error;
        if (std::strcmp(s, "debug") == 0) return LogLevel::debug;
        return LogLevel::info;
    }();
    return lvl;
}

inline void log_at(LogLevel lvl, const char* tag, const char* fmt, va_list ap) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, ap);
    std::fprintf(stderr, "\n");
    std::fflush(stderr);
}

#if defined(__GNUC__)
#define ADD_PRINTF_CHECK __attribute__((format(printf, 1, 2)))
#else
#define ADD_PRINTF_CHECK
#endif

ADD_PRINTF_CHECK inline void log_error(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::error, "error", fmt, ap);
    va_end(ap);
}

ADD_PRINTF_CHECK inline void log_info(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::info, "info", fmt, ap);
    va_end(ap);
}

ADD_PRINTF_CHECK inline void log_debug(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::debug, "debug", fmt, ap);
    va_end(ap);
}

#undef ADD_PRINTF_CHECK

} // namespace add
