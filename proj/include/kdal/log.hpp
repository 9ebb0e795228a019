#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace kdal {

enum class LogLevel { info, warning, error };

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {
inline LogSink& log_sink() {
    static LogSink sink = [](LogLevel level, std::string_view msg) {
        static std::mutex mu;
        std::lock_guard lock(mu);
        const char* tag = level == LogLevel::info ? "info" : level == LogLevel::warning ? "warning" : "error";
        std::cerr << "[kdal " << tag << "] " << msg << '\n';
    };
    return sink;
}
}  // namespace detail

// Replaces the process-wide sink; returns the previous one.
inline LogSink set_log_sink(LogSink sink) {
    auto old = std::move(detail::log_sink());
    detail::log_sink() = std::move(sink);
    return old;
}

inline void log_info(std::string_view msg) { detail::log_sink()(LogLevel::info, msg); }
inline void log_warning(std::string_view msg) { detail::log_sink()(LogLevel::warning, msg); }
inline void log_error(std::string_view msg) { detail::log_sink()(LogLevel::error, msg); }

}  // namespace kdal
