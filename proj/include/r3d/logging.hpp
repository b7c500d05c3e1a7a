#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace r3d {

enum class LogLevel : int { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

namespace detail {
inline LogLevel& log_level_ref() {
  static LogLevel level = [] {
    const char* env = std::getenv("R3DAD_LOG");
    if (env == nullptr) return LogLevel::kWarn;
    if (std::strcmp(env, "error") == 0) return LogLevel::kError;
    if (std::strcmp(env, "warn") == 0) return LogLevel::kWarn;
    if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
    if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}
}  // namespace detail

inline LogLevel log_level() { return detail::log_level_ref(); }

// Raises verbosity only; an explicit R3DAD_LOG setting still wins.
inline void raise_log_level(LogLevel level) {
  if (std::getenv("R3DAD_LOG") != nullptr) return;
  if (static_cast<int>(level) > static_cast<int>(detail::log_level_ref()))
    detail::log_level_ref() = level;
}

inline void vlog(LogLevel level, const char* tag, const char* fmt, std::va_list ap) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
}

inline void log_error(const char* fmt, ...) {
  std::va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::kError, "error", fmt, ap);
  va_end(ap);
}

inline void log_warn(const char* fmt, ...) {
  std::va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::kWarn, "warn", fmt, ap);
  va_end(ap);
}

inline void log_info(const char* fmt, ...) {
  std::va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::kInfo, "info", fmt, ap);
  va_end(ap);
}

inline void log_debug(const char* fmt, ...) {
  std::va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::kDebug, "debug", fmt, ap);
  va_end(ap);
}

}  // namespace r3d
