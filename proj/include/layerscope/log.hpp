#pragma once

#include <spdlog/spdlog.h>

namespace layerscope {

// Shared stderr logger. Level comes from LAYERSCOPE_LOG={error,warn,info,debug}
// on first use and defaults to warn.
spdlog::logger& log();

}  // namespace layerscope
