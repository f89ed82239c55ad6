#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace portajob {

enum class LogLevel { Debug, Info, Warning, Error };

using LogSink = std::function<void(LogLevel, std::string_view)>;

// Replaces the process-wide sink; passing an empty function restores the
// default, which writes warnings and errors to stderr.
void set_log_sink(LogSink sink);

void log(LogLevel level, std::string_view message);

} // namespace portajob
