#include "layoutgen/segmentation.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/log.hpp"

#include <algorithm>

namespace layoutgen {

std::optional<BinaryMask> best_candidate(const Segmenter& segmenter, const SegmenterQuery& query) {
    const auto candidates = segmenter.segment(query.image, query.box_prompt);
    const ScoredMask* best = nullptr;
    for (const auto& c : candidates) {
        if (c.mask.height() != query.image.height() || c.mask.width() != query.image.width()) continue;
        if (!best || c.score > best->score) best = &c;
    }
    if (!best) return std::nullopt;
    return best->mask;
}

BinaryMask refine_mask(const Image& image, const BinaryMask& original_mask, const Segmenter& segmenter,
                       const RefineOptions& options) {
    const BBox box = bbox(original_mask);
    if (image.height() != original_mask.height() || image.width() != original_mask.width()) {
        throw Error(Errc::ShapeMismatch, "image and mask sizes differ", "segmentation");
    }

    std::string problem;
    try {
        if (auto best = best_candidate(segmenter, {image, box})) {
            BinaryMask refined = *best & original_mask;
            if (refined.any()) return refined;
            problem = "segmentation does not intersect the layout mask";
        } else {
            problem = "segmenter returned no usable mask";
        }
    } catch (const std::exception& e) {
        problem = std::string("segmenter failed: ") + e.what();
    }
    if (!options.allow_fallback) {
        throw Error(Errc::SegmenterFailure, problem, "segmentation");
    }
    logger()->warn("{}; using the layout mask instead (quality may degrade)", problem);
    return original_mask;
}

CompositeKnown compose_known(std::span<const ObjectResult> results) {
    if (results.empty()) {
        throw Error(Errc::ValidationError, "composition needs at least one object", "segmentation");
    }
    const int H = results.front().image.height();
    const int W = results.front().image.width();
    CompositeKnown out;
    out.known_image = Image(H, W, 0.0f);
    for (const auto& r : results) {
        if (r.image.height() != H || r.image.width() != W || r.refined_mask.height() != H ||
            r.refined_mask.width() != W) {
            throw Error(Errc::ShapeMismatch, "object '" + r.object_id + "' does not match the canvas",
                        "segmentation");
        }
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!r.refined_mask.at(y, x)) continue;
                for (int c = 0; c < 3; ++c) out.known_image.at(y, x, c) = r.image.at(y, x, c);
            }
        }
        out.refined_masks.push_back(r.refined_mask);
    }
    out.inpaint_mask = background_mask(out.refined_masks);
    return out;
}

} // namespace layoutgen
