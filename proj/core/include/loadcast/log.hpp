#pragma once

#include <functional>
#include <string_view>

namespace loadcast {

enum class LogLevel { Info, Warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

/// Replaces the process-wide sink (default: warnings to stderr). Returns the old one.
LogSink set_log_sink(LogSink sink);
void log_message(LogLevel level, std::string_view message);

}  // namespace loadcast
