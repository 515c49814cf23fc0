#include "layoutgen/eval.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/log.hpp"
#include "layoutgen/segmentation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace layoutgen {

using json = nlohmann::json;

double clip_term(std::span<const double> image_embedding, std::span<const double> text_embedding) {
    return std::max(100.0 * cosine(image_embedding, text_embedding), 0.0);
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) {
        throw Error(Errc::ShapeMismatch, "IoU of masks with different shapes");
    }
    std::size_t inter = 0, uni = 0;
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        inter += da[i] & db[i];
        uni += da[i] | db[i];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ObjectScore> score_objects(const Image& image, const Layout& layout,
                                       const ImageTextEmbedder* embedder, const Segmenter* segmenter) {
    if (image.height() != layout.canvas_height || image.width() != layout.canvas_width) {
        throw Error(Errc::ShapeMismatch, "image size differs from the layout canvas");
    }
    std::vector<ObjectScore> out;
    for (const auto& o : layout.objects) {
        ObjectScore s;
        s.object_id = o.id;
        s.crop = bbox(o.mask);
        if (embedder) {
            const Image crop = image.crop(s.crop.x, s.crop.y, s.crop.w, s.crop.h);
            s.clip = clip_term(embedder->embed_image(crop), embedder->embed_text(o.prompt));
        }
        if (segmenter) {
            try {
                if (auto predicted = best_candidate(*segmenter, {image, s.crop})) {
                    s.iou = mask_iou(*predicted, o.mask);
                } else {
                    logger()->warn("no segmentation for object '{}'; IoU scored as 0", o.id);
                }
            } catch (const std::exception& e) {
                logger()->warn("segmentation failed for object '{}' ({}); IoU scored as 0", o.id, e.what());
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

template <typename Field>
double mean_of(const std::vector<ObjectScore>& scores, Field field) {
    if (scores.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : scores) total += s.*field;
    return total / static_cast<double>(scores.size());
}

} // namespace

double local_clip_score(const Image& image, const Layout& layout, const ImageTextEmbedder& embedder) {
    return mean_of(score_objects(image, layout, &embedder, nullptr), &ObjectScore::clip);
}

double local_iou(const Image& image, const Layout& layout, const Segmenter& segmenter) {
    return mean_of(score_objects(image, layout, nullptr, &segmenter), &ObjectScore::iou);
}

BinaryMask rasterize_polygon(const std::vector<double>& xy, int height, int width) {
    BinaryMask out(height, width);
    const std::size_t n = xy.size() / 2;
    if (n < 3) return out;
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        std::vector<double> crossings;
        for (std::size_t i = 0; i < n; ++i) {
            const double x0 = xy[2 * i], y0 = xy[2 * i + 1];
            const double x1 = xy[2 * ((i + 1) % n)], y1 = xy[2 * ((i + 1) % n) + 1];
            if ((y0 <= cy) != (y1 <= cy)) {
                crossings.push_back(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
            for (int x = 0; x < width; ++x) {
                const double cx = x + 0.5;
                if (cx >= crossings[k] && cx < crossings[k + 1]) out.set(y, x, true);
            }
        }
    }
    return out;
}

BinaryMask decode_coco_rle(const json& rle) {
    if (!rle.is_object() || !rle.contains("size") || !rle.contains("counts")) {
        throw Error(Errc::AnnotationParseError, "RLE needs 'size' and 'counts'");
    }
    const auto& size = rle.at("size");
    if (!size.is_array() || size.size() != 2) {
        throw Error(Errc::AnnotationParseError, "RLE 'size' must be [h, w]");
    }
    const int h = size[0].get<int>();
    const int w = size[1].get<int>();
    std::vector<long long> counts;
    const auto& c = rle.at("counts");
    if (c.is_array()) {
        for (const auto& v : c) counts.push_back(v.get<long long>());
    } else if (c.is_string()) {
        // LEB128-like packing: 5 bits per char, offset by 48, deltas after the second count.
        const auto s = c.get<std::string>();
        std::size_t p = 0;
        while (p < s.size()) {
            long long x = 0;
            int k = 0;
            bool more = true;
            while (more) {
                if (p >= s.size()) throw Error(Errc::AnnotationParseError, "truncated compressed RLE");
                const long long ch = static_cast<long long>(s[p]) - 48;
                x |= (ch & 0x1f) << (5 * k);
                more = (ch & 0x20) != 0;
                ++p;
                ++k;
                if (!more && (ch & 0x10)) x |= -1LL << (5 * k);
            }
            if (counts.size() > 2) x += counts[counts.size() - 2];
            counts.push_back(x);
        }
    } else {
        throw Error(Errc::AnnotationParseError, "RLE 'counts' must be a list or a string");
    }

    std::vector<std::uint8_t> col_major;
    col_major.reserve(static_cast<std::size_t>(h) * w);
    std::uint8_t value = 0;
    for (long long run : counts) {
        if (run < 0 || col_major.size() + static_cast<std::size_t>(run) > static_cast<std::size_t>(h) * w) {
            throw Error(Errc::AnnotationParseError, "RLE counts exceed mask size");
        }
        col_major.insert(col_major.end(), static_cast<std::size_t>(run), value);
        value ^= 1;
    }
    if (col_major.size() != static_cast<std::size_t>(h) * w) {
        throw Error(Errc::AnnotationParseError, "RLE counts do not cover the mask");
    }
    BinaryMask out(h, w);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) out.set(y, x, col_major[static_cast<std::size_t>(x) * h + y] != 0);
    }
    return out;
}

namespace {

BinaryMask annotation_mask(const json& ann, int height, int width) {
    const auto& seg = ann.at("segmentation");
    if (seg.is_array()) {
        BinaryMask out(height, width);
        for (const auto& poly : seg) out = out | rasterize_polygon(poly.get<std::vector<double>>(), height, width);
        return out;
    }
    BinaryMask m = decode_coco_rle(seg);
    if (m.height() != height || m.width() != width) {
        throw Error(Errc::AnnotationParseError, "RLE size differs from its image");
    }
    return m;
}

std::string apply_template(const std::string& tmpl, const std::string& category) {
    std::string out = tmpl;
    if (auto pos = out.find("{}"); pos != std::string::npos) out.replace(pos, 2, category);
    return out;
}

} // namespace

std::vector<Layout> prepare_layouts(std::string_view coco_json, const CocoOptions& options) {
    json root;
    try {
        root = json::parse(coco_json);
    } catch (const json::parse_error& e) {
        throw Error(Errc::AnnotationParseError, e.what());
    }
    std::vector<Layout> layouts;
    try {
        std::map<long long, std::string> categories;
        for (const auto& c : root.at("categories")) categories[c.at("id").get<long long>()] = c.at("name").get<std::string>();

        std::map<long long, std::vector<const json*>> by_image;
        for (const auto& a : root.at("annotations")) by_image[a.at("image_id").get<long long>()].push_back(&a);

        for (const auto& img : root.at("images")) {
            if (options.limit && layouts.size() >= options.limit) break;
            const long long image_id = img.at("id").get<long long>();
            const int h = img.at("height").get<int>();
            const int w = img.at("width").get<int>();

            Layout layout;
            layout.canvas_height = options.target_size;
            layout.canvas_width = options.target_size;
            std::vector<std::string> names;
            for (const json* ann : by_image[image_id]) {
                const BinaryMask full = annotation_mask(*ann, h, w);
                if (mask_area_fraction(full) < options.min_area_fraction) continue;
                BinaryMask resized = resize_nearest(full, options.target_size, options.target_size);
                if (!resized.any()) continue;
                const long long cat = ann->at("category_id").get<long long>();
                auto it = categories.find(cat);
                if (it == categories.end()) {
                    throw Error(Errc::AnnotationParseError, "unknown category id " + std::to_string(cat));
                }
                ObjectSpec spec;
                const long long ann_id = ann->at("id").get<long long>();
                spec.id = "ann" + std::to_string(ann_id);
                spec.prompt = apply_template(options.prompt_template, it->second);
                spec.seed = static_cast<std::uint64_t>(ann_id);
                spec.mask = std::move(resized);
                layout.objects.push_back(std::move(spec));
                names.push_back(it->second);
            }
            if (layout.objects.empty()) continue;
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (i) layout.global_prompt += options.global_separator;
                layout.global_prompt += names[i];
            }
            layouts.push_back(std::move(layout));
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(Errc::AnnotationParseError, std::string("malformed COCO annotations: ") + e.what());
    }
    return layouts;
}

EvalReport aggregate(const std::vector<std::vector<ObjectScore>>& per_layout) {
    EvalReport report;
    double clip_sum = 0.0, iou_sum = 0.0;
    for (const auto& scores : per_layout) {
        if (scores.empty()) continue;
        clip_sum += mean_of(scores, &ObjectScore::clip);
        iou_sum += mean_of(scores, &ObjectScore::iou);
        ++report.n_layouts;
        report.n_objects += scores.size();
        report.per_object.insert(report.per_object.end(), scores.begin(), scores.end());
    }
    if (report.n_layouts) {
        report.clip_local = clip_sum / static_cast<double>(report.n_layouts);
        report.iou_local = iou_sum / static_cast<double>(report.n_layouts);
    }
    return report;
}

json to_json(const EvalReport& report) {
    json j;
    j["clip_local"] = report.clip_local;
    j["iou_local"] = report.iou_local;
    j["n_layouts"] = report.n_layouts;
    j["n_objects"] = report.n_objects;
    j["assumptions"] = report.assumptions;
    j["per_object"] = json::array();
    for (const auto& s : report.per_object) {
        j["per_object"].push_back({{"object_id", s.object_id},
                                   {"crop", {s.crop.x, s.crop.y, s.crop.w, s.crop.h}},
                                   {"clip", s.clip},
                                   {"iou", s.iou}});
    }
    return j;
}

std::string format_table(const EvalReport& report) {
    std::ostringstream out;
    for (const auto& a : report.assumptions) out << "# " << a << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-24s %12s %10s\n", "object", "CLIP(local)", "IoU(local)");
    out << line;
    for (const auto& s : report.per_object) {
        std::snprintf(line, sizeof line, "%-24s %12.2f %10.3f\n", s.object_id.c_str(), s.clip, s.iou);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-24s %12.2f %10.3f\n", "mean", report.clip_local, report.iou_local);
    out << line;
    out << "layouts: " << report.n_layouts << ", objects: " << report.n_objects << "\n";
    return out.str();
}

} // namespace layoutgen
