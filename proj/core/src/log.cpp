#include "marginfer/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace marginfer {
namespace {

LogLevel parse_level_from_env() {
    const char* raw = std::getenv("MARGINFER_LOG");
    if (raw == nullptr) return LogLevel::kWarn;
    const std::string v(raw);
    if (v == "error") return LogLevel::kError;
    if (v == "warn") return LogLevel::kWarn;
    if (v == "info") return LogLevel::kInfo;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kWarn;
}

LogLevel active_level() {
    static const LogLevel level = parse_level_from_env();
    return level;
}

const char* level_name(LogLevel level) {
    switch (level) {
        case LogLevel::kError: return "error";
        case LogLevel::kWarn: return "warn";
        case LogLevel::kInfo: return "info";
        case LogLevel::kDebug: return "debug";
    }
    return "?";
}

std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

bool log_enabled(LogLevel level) {
    return static_cast<int>(level) <= static_cast<int>(active_level());
}

void log_message(LogLevel level, const std::string& message) {
    if (!log_enabled(level)) return;
    std::lock_guard<std::mutex> lock(log_mutex());
    std::cerr << "[" << level_name(level) << "] " << message << "\n";
}

}  // namespace marginfer
