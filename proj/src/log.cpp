#include "metalens/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace metalens::log {

Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("METALENS_LOG");
    const std::string v = env ? env : "";
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

void write(Level level, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static constexpr const char* kTags[] = {"error", "warn", "info", "debug"};
  std::cerr << '[' << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace metalens::log
