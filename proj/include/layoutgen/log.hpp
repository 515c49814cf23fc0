#pragma once

#include <spdlog/spdlog.h>

#include <memory>

namespace layoutgen {

/// Library-wide logger ("layoutgen"), created on first use with a stderr sink.
[[nodiscard]] std::shared_ptr<spdlog::logger> logger();

} // namespace layoutgen
