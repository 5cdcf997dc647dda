#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>

namespace scanet::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Threshold read once from SCANET_LOG (debug|info|warn|error|off); default warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("SCANET_LOG");
    if (env == nullptr) return Level::Warn;
    std::string_view v(env);
    if (v == "debug") return Level::Debug;
    if (v == "info") return Level::Info;
    if (v == "warn") return Level::Warn;
    if (v == "error") return Level::Error;
    if (v == "off") return Level::Off;
    return Level::Warn;
  }();
  return level;
}

inline bool enabled(Level level) { return level >= threshold(); }

template <typename... Args>
void write(Level level, std::string_view tag, const Args&... args) {
  if (!enabled(level)) return;
  std::ostringstream os;
  os << '[' << tag << "] ";
  (os << ... << args);
  os << '\n';
  std::cerr << os.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::Debug, "debug", args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::Info, "info", args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::Warn, "warn", args...); }

}  // namespace scanet::log
