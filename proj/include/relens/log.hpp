#pragma once

#include <spdlog/spdlog.h>

#include <memory>

namespace relens {

// Shared stderr logger. Machine-readable output never goes through it.
spdlog::logger& logger();

}  // namespace relens
