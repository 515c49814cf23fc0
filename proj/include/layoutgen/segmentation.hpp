#pragma once

#include "layoutgen/backends.hpp"
#include "layoutgen/layout.hpp"
#include "layoutgen/sog.hpp"

#include <optional>
#include <span>
#include <vector>

namespace layoutgen {

struct SegmenterQuery {
    const Image& image;
    BBox box_prompt;
};

struct RefineOptions {
    /// When false a failed segmentation throws SegmenterFailure instead of
    /// falling back to the original mask.
    bool allow_fallback = true;
};

/// Highest-scoring candidate of a query, or nothing. Candidates whose shape
/// differs from the image are ignored.
[[nodiscard]] std::optional<BinaryMask> best_candidate(const Segmenter& segmenter,
                                                       const SegmenterQuery& query);

/// Best segmenter candidate for the original mask's box, intersected with
/// the original mask. Falls back to the original mask (with a warning) when
/// the segmenter fails or the intersection is empty. Throws EmptyMask.
[[nodiscard]] BinaryMask refine_mask(const Image& image, const BinaryMask& original_mask,
                                     const Segmenter& segmenter, const RefineOptions& options = {});

struct CompositeKnown {
    Image known_image;       ///< objects pasted in layout order, 0 elsewhere
    BinaryMask inpaint_mask; ///< 1 = region to inpaint
    std::vector<BinaryMask> refined_masks;
};

/// Pastes each result's image through its refined mask, later results on
/// top. Throws ShapeMismatch or ValidationError when there are no results.
[[nodiscard]] CompositeKnown compose_known(std::span<const ObjectResult> results);

} // namespace layoutgen
