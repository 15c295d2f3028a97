#include "fedsim/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace fedsim {

namespace {

LogLevel parse_env() {
  const char* env = std::getenv("FEDSIM_LOG");
  if (env == nullptr) return LogLevel::warn;
  std::string v(env);
  if (v == "error") return LogLevel::error;
  if (v == "warn") return LogLevel::warn;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::warn;
}

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::error: return "error";
    case LogLevel::warn: return "warn";
    case LogLevel::info: return "info";
    case LogLevel::debug: return "debug";
  }
  return "?";
}

std::mutex g_log_mutex;

}  // namespace

LogLevel log_threshold() {
  static LogLevel threshold = parse_env();
  return threshold;
}

bool log_enabled(LogLevel level) {
  return static_cast<int>(level) <= static_cast<int>(log_threshold());
}

void log_message(LogLevel level, const std::string& message) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::fprintf(stderr, "fedsim [%s] %s\n", level_name(level), message.c_str());
}

}  // namespace fedsim
