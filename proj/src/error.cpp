#include "layoutgen/error.hpp"
#include "layoutgen/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

#include <mutex>

namespace layoutgen {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::InvalidTimesteps: return "InvalidTimesteps";
    case Errc::ParseError: return "ParseError";
    case Errc::ValidationError: return "ValidationError";
    case Errc::MissingGroupKV: return "MissingGroupKV";
    case Errc::UnknownPrompt: return "UnknownPrompt";
    case Errc::BackendFailure: return "BackendFailure";
    case Errc::SegmenterFailure: return "SegmenterFailure";
    case Errc::AnnotationParseError: return "AnnotationParseError";
    case Errc::IoError: return "IoError";
    case Errc::NotFound: return "NotFound";
    case Errc::InvalidState: return "InvalidState";
    }
    return "Unknown";
}

std::shared_ptr<spdlog::logger> logger() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (!spdlog::get("layoutgen")) {
            auto l = spdlog::stderr_color_mt("layoutgen");
            l->set_pattern("[%l] %v");
        }
    });
    return spdlog::get("layoutgen");
}

} // namespace layoutgen
