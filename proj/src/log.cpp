#include "layerscope/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

#include <cstdlib>
#include <memory>
#include <string_view>

namespace layerscope {
namespace {

spdlog::level::level_enum level_from_env() {
  const char* raw = std::getenv("LAYERSCOPE_LOG");
  if (raw == nullptr) return spdlog::level::warn;
  const std::string_view v(raw);
  if (v == "error") return spdlog::level::err;
  if (v == "info") return spdlog::level::info;
  if (v == "debug") return spdlog::level::debug;
  return spdlog::level::warn;
}

}  // namespace

spdlog::logger& log() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    auto logger = std::make_shared<spdlog::logger>("layerscope", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(level_from_env());
    return logger;
  }();
  return *instance;
}

}  // namespace layerscope
