#include "pcsep/log.hpp"

#include <iostream>
#include <mutex>

namespace pcsep {

namespace {
std::mutex g_log_mutex;
LogSink g_sink;

void emit(std::string_view level, std::string_view message) {
  std::lock_guard lock(g_log_mutex);
  if (g_sink) {
    g_sink(level, message);
  } else {
    std::cerr << '[' << level << "] " << message << '\n';
  }
}
}  // namespace

void log_info(std::string_view message) { emit("info", message); }

void log_warning(std::string_view message) { emit("warning", message); }

LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(g_log_mutex);
  LogSink previous = std::move(g_sink);
  g_sink = std::move(sink);
  return previous;
}

}  // namespace pcsep
