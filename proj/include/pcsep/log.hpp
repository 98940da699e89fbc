#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace pcsep {

void log_info(std::string_view message);
void log_warning(std::string_view message);

// Replaces the destination of log lines (stderr by default). Returns the
// previous sink; an empty function restores stderr.
using LogSink = std::function<void(std::string_view level, std::string_view message)>;
LogSink set_log_sink(LogSink sink);

}  // namespace pcsep
