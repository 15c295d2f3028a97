#pragma once

#include <sstream>
#include <string>

namespace fedsim {

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

// Threshold comes from the FEDSIM_LOG environment variable
// (error|warn|info|debug), read once. Default: warn.
LogLevel log_threshold();

bool log_enabled(LogLevel level);

// Writes "fedsim [level] message" to stderr when enabled.
void log_message(LogLevel level, const std::string& message);

namespace detail {
template <typename... Args>
void log_fmt(LogLevel level, Args&&... args) {
  if (!log_enabled(level)) return;
  std::ostringstream os;
  (os << ... << args);
  log_message(level, os.str());
}
}  // namespace detail

#define FEDSIM_LOG_ERROR(...) \
  ::fedsim::detail::log_fmt(::fedsim::LogLevel::error, __VA_ARGS__)
#define FEDSIM_LOG_WARN(...) \
  ::fedsim::detail::log_fmt(::fedsim::LogLevel::warn, __VA_ARGS__)
#define FEDSIM_LOG_INFO(...) \
  ::fedsim::detail::log_fmt(::fedsim::LogLevel::info, __VA_ARGS__)
#define FEDSIM_LOG_DEBUG(...) \
  ::fedsim::detail::log_fmt(::fedsim::LogLevel::debug, __VA_ARGS__)

}  // namespace fedsim
