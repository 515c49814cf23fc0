#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace layoutgen {

enum class Errc {
    EmptyMask,
    ShapeMismatch,
    LengthMismatch,
    DimensionMismatch,
    InvalidRange,
    InvalidTimesteps,
    ParseError,
    ValidationError,
    MissingGroupKV,
    UnknownPrompt,
    BackendFailure,
    SegmenterFailure,
    AnnotationParseError,
    IoError,
    NotFound,
    InvalidState,
};

[[nodiscard]] std::string_view errc_name(Errc code) noexcept;

/// Single exception type for the whole library. `stage` names the pipeline
/// stage (e.g. "sog", "segmentation", "cc") when the error crosses one.
class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& message, std::string stage = {})
        : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

    [[nodiscard]] Errc code() const noexcept { return code_; }
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

  private:
    Errc code_;
    std::string stage_;
};

} // namespace layoutgen
