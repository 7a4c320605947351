#pragma once

#include <cstdio>
#include <mutex>
#include <string>
#include <string_view>

namespace roivqa {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, silent = 4 };

namespace detail {

inline LogLevel& log_threshold() {
    static LogLevel level = LogLevel::warn;
    return level;
}

inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

inline void log_line(LogLevel level, std::string_view tag,
                     std::string_view msg) {
    if (level < log_threshold()) return;
    std::lock_guard lock(log_mutex());
    std::fprintf(stderr, "[%.*s] %.*s\n", static_cast<int>(tag.size()),
                 tag.data(), static_cast<int>(msg.size()), msg.data());
}

}  // namespace detail

inline void set_log_level(LogLevel level) { detail::log_threshold() = level; }

inline void log_debug(std::string_view msg) {
    detail::log_line(LogLevel::debug, "debug", msg);
}
inline void log_info(std::string_view msg) {
    detail::log_line(LogLevel::info, "info", msg);
}
inline void log_warn(std::string_view msg) {
    detail::log_line(LogLevel::warn, "warn", msg);
}
inline void log_error(std::string_view msg) {
    detail::log_line(LogLevel::error, "error", msg);
}

}  // namespace roivqa
