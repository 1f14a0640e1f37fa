#pragma once

#include <string>

namespace marginfer {

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Verbosity comes from the MARGINFER_LOG environment variable
/// (error|warn|info|debug); default is warn.
bool log_enabled(LogLevel level);

/// Writes "[level] message" to stderr when the level is enabled.
void log_message(LogLevel level, const std::string& message);

inline void log_error(const std::string& m) { log_message(LogLevel::kError, m); }
inline void log_warn(const std::string& m) { log_message(LogLevel::kWarn, m); }
inline void log_info(const std::string& m) { log_message(LogLevel::kInfo, m); }
inline void log_debug(const std::string& m) { log_message(LogLevel::kDebug, m); }

}  // namespace marginfer
