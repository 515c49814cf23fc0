#pragma once

#include "layoutgen/backends.hpp"
#include "layoutgen/layout.hpp"

#include "json.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace layoutgen {

struct ObjectScore {
    std::string object_id;
    BBox crop;
    double clip = 0.0;
    double iou = 0.0;
};

struct EvalReport {
    double clip_local = 0.0;
    double iou_local = 0.0;
    std::vector<ObjectScore> per_object;
    std::size_t n_layouts = 0;
    std::size_t n_objects = 0;
    std::vector<std::string> assumptions;
};

/// max(100·cos(a, b), 0)
[[nodiscard]] double clip_term(std::span<const double> image_embedding,
                               std::span<const double> text_embedding);

/// |a ∧ b| / |a ∨ b|; 0 when both are empty. Throws ShapeMismatch.
[[nodiscard]] double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Per-object terms for one image; shared by the two means below.
[[nodiscard]] std::vector<ObjectScore> score_objects(const Image& image, const Layout& layout,
                                                     const ImageTextEmbedder* embedder,
                                                     const Segmenter* segmenter);

/// Mean over objects of max(100·cos(E_img(bbox crop), E_txt(prompt)), 0).
/// Throws EmptyMask, ShapeMismatch.
[[nodiscard]] double local_clip_score(const Image& image, const Layout& layout,
                                      const ImageTextEmbedder& embedder);

/// Mean over objects of IoU(best segmenter candidate for bbox(M), M). A
/// failed segmentation scores 0 with a warning.
[[nodiscard]] double local_iou(const Image& image, const Layout& layout, const Segmenter& segmenter);

struct CocoOptions {
    double min_area_fraction = 0.05;
    int target_size = 512;
    std::string prompt_template = "a photo of a {}";
    std::string global_separator = ", ";
    std::size_t limit = 0; ///< 0 keeps every image
};

/// COCO instance annotations to layouts: masks below the area fraction are
/// dropped, the rest resized to target_size², images left empty skipped.
/// Throws AnnotationParseError.
[[nodiscard]] std::vector<Layout> prepare_layouts(std::string_view coco_json,
                                                  const CocoOptions& options = {});

/// Polygon fill at pixel centres, even-odd rule.
[[nodiscard]] BinaryMask rasterize_polygon(const std::vector<double>& xy, int height, int width);
/// COCO RLE (column-major), counts either as integers or the compressed string.
[[nodiscard]] BinaryMask decode_coco_rle(const nlohmann::json& rle);

/// Folds per-layout object scores into a report.
[[nodiscard]] EvalReport aggregate(const std::vector<std::vector<ObjectScore>>& per_layout);

[[nodiscard]] nlohmann::json to_json(const EvalReport& report);
[[nodiscard]] std::string format_table(const EvalReport& report);

} // namespace layoutgen
