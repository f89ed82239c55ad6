#include "portajob/log.hpp"

#include <iostream>
#include <mutex>

namespace portajob {

namespace {

std::mutex sink_mutex;
LogSink current_sink;

void default_sink(LogLevel level, std::string_view message) {
    if (level < LogLevel::Warning) {
        return;
    }
    std::cerr << "portajob: " << (level == LogLevel::Error ? "error: " : "warning: ") << message << '\n';
}

} // namespace

void set_log_sink(LogSink sink) {
    std::lock_guard lock(sink_mutex);
    current_sink = std::move(sink);
}

void log(LogLevel level, std::string_view message) {
    std::lock_guard lock(sink_mutex);
    if (current_sink) {
        current_sink(level, message);
    } else {
        default_sink(level, message);
    }
}

} // namespace portajob
