#include "loadcast/log.hpp"

#include <iostream>
#include <mutex>

namespace loadcast {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& sink() {
  static LogSink s = [](LogLevel level, std::string_view message) {
    if (level == LogLevel::Warning) std::cerr << "warning: " << message << '\n';
  };
  return s;
}

}  // namespace

LogSink set_log_sink(LogSink next) {
  std::lock_guard lock(sink_mutex());
  LogSink previous = std::move(sink());
  sink() = std::move(next);
  return previous;
}

void log_message(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(level, message);
}

}  // namespace loadcast
