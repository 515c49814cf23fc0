#include "layoutgen/layout.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/image.hpp"
#include "layoutgen/log.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace layoutgen {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
        throw Error(Errc::ValidationError, "mask dimensions must be positive");
    }
    if (fill > 1) {
        throw Error(Errc::ValidationError, "mask values must be 0 or 1");
    }
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (height <= 0 || width <= 0) {
        throw Error(Errc::ValidationError, "mask dimensions must be positive");
    }
    if (data_.size() != static_cast<std::size_t>(height) * width) {
        throw Error(Errc::ShapeMismatch, "mask data length does not match dimensions");
    }
    if (std::any_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v > 1; })) {
        throw Error(Errc::ValidationError, "mask values must be 0 or 1");
    }
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) {
        throw Error(Errc::ShapeMismatch, "mask shapes differ: " + std::to_string(a.height()) + "x" +
                                             std::to_string(a.width()) + " vs " +
                                             std::to_string(b.height()) + "x" +
                                             std::to_string(b.width()));
    }
}

template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, Op op) {
    require_same_shape(a, b);
    std::vector<std::uint8_t> out(a.size());
    std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), op);
    return BinaryMask(a.height(), a.width(), std::move(out));
}

} // namespace

BinaryMask BinaryMask::operator&(const BinaryMask& other) const {
    return combine(*this, other, [](std::uint8_t x, std::uint8_t y) { return static_cast<std::uint8_t>(x & y); });
}

BinaryMask BinaryMask::operator|(const BinaryMask& other) const {
    return combine(*this, other, [](std::uint8_t x, std::uint8_t y) { return static_cast<std::uint8_t>(x | y); });
}

BinaryMask BinaryMask::operator~() const {
    std::vector<std::uint8_t> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(1 - v); });
    return BinaryMask(height_, width_, std::move(out));
}

std::vector<BinaryMask> Layout::masks() const {
    std::vector<BinaryMask> out;
    out.reserve(objects.size());
    for (const auto& o : objects) out.push_back(o.mask);
    return out;
}

const ObjectSpec* Layout::find(std::string_view id) const {
    auto it = std::find_if(objects.begin(), objects.end(), [&](const ObjectSpec& o) { return o.id == id; });
    return it == objects.end() ? nullptr : &*it;
}

BBox bbox(const BinaryMask& mask) {
    int min_x = std::numeric_limits<int>::max(), min_y = min_x;
    int max_x = -1, max_y = -1;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask.at(y, x)) {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (max_x < 0) {
        throw Error(Errc::EmptyMask, "bounding box of an empty mask");
    }
    return BBox{min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
}

double mask_area_fraction(const BinaryMask& mask) noexcept {
    if (mask.size() == 0) return 0.0;
    return static_cast<double>(mask.count()) / static_cast<double>(mask.size());
}

BinaryMask background_mask(std::span<const BinaryMask> masks) {
    if (masks.empty()) {
        throw Error(Errc::ShapeMismatch, "background of zero masks needs an explicit shape");
    }
    return background_mask(masks, masks.front().height(), masks.front().width());
}

BinaryMask background_mask(std::span<const BinaryMask> masks, int height, int width) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * width, 1);
    for (const auto& m : masks) {
        if (m.height() != height || m.width() != width) {
            throw Error(Errc::ShapeMismatch, "background_mask: mask shape differs from canvas");
        }
        const auto d = m.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] &= static_cast<std::uint8_t>(1 - d[i]);
    }
    return BinaryMask(height, width, std::move(out));
}

std::vector<std::pair<std::size_t, std::size_t>> overlap_pairs(std::span<const BinaryMask> masks) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (std::size_t j = i + 1; j < masks.size(); ++j) {
            require_same_shape(masks[i], masks[j]);
            const auto a = masks[i].data();
            const auto b = masks[j].data();
            for (std::size_t k = 0; k < a.size(); ++k) {
                if (a[k] & b[k]) {
                    out.emplace_back(i, j);
                    break;
                }
            }
        }
    }
    return out;
}

BinaryMask downsample_mask(const BinaryMask& mask, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1) {
        throw Error(Errc::InvalidRange, "downsample target must be at least 1x1");
    }
    const int H = mask.height();
    const int W = mask.width();
    // Cell (r, c) covers source rows [r·H/th, (r+1)·H/th) in exact rational
    // arithmetic; partially covered source pixels contribute their overlap.
    // Working in units of 1/(th·tw) keeps every weight an integer.
    std::vector<std::uint8_t> out(static_cast<std::size_t>(target_h) * target_w, 0);
    for (int r = 0; r < target_h; ++r) {
        const long long y0 = static_cast<long long>(r) * H;  // in units of 1/target_h
        const long long y1 = static_cast<long long>(r + 1) * H;
        for (int c = 0; c < target_w; ++c) {
            const long long x0 = static_cast<long long>(c) * W;
            const long long x1 = static_cast<long long>(c + 1) * W;
            long long covered = 0;
            for (long long sy = y0 / target_h; sy * target_h < y1; ++sy) {
                const long long oy = std::min(y1, (sy + 1) * target_h) - std::max(y0, sy * target_h);
                for (long long sx = x0 / target_w; sx * target_w < x1; ++sx) {
                    if (!mask.at(static_cast<int>(sy), static_cast<int>(sx))) continue;
                    const long long ox = std::min(x1, (sx + 1) * target_w) - std::max(x0, sx * target_w);
                    covered += oy * ox;
                }
            }
            // Cell area is H·W in these units; mean > 0.5 ⇔ 2·covered > H·W.
            out[static_cast<std::size_t>(r) * target_w + c] =
                2 * covered > static_cast<long long>(H) * W ? 1 : 0;
        }
    }
    return BinaryMask(target_h, target_w, std::move(out));
}

BinaryMask resize_nearest(const BinaryMask& mask, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1) {
        throw Error(Errc::InvalidRange, "resize target must be at least 1x1");
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(target_h) * target_w);
    for (int r = 0; r < target_h; ++r) {
        const int sy = static_cast<int>((2LL * r + 1) * mask.height() / (2LL * target_h));
        for (int c = 0; c < target_w; ++c) {
            const int sx = static_cast<int>((2LL * c + 1) * mask.width() / (2LL * target_w));
            out[static_cast<std::size_t>(r) * target_w + c] = mask.at(sy, sx);
        }
    }
    return BinaryMask(target_h, target_w, std::move(out));
}

namespace {

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

} // namespace

std::vector<std::string> validate(const Layout& layout) {
    std::vector<std::string> issues;
    if (layout.canvas_height <= 0 || layout.canvas_width <= 0) {
        issues.push_back("canvas: dimensions must be positive");
    }
    if (layout.objects.empty()) {
        issues.push_back("objects: at least one object is required");
    }
    std::set<std::string> ids;
    for (std::size_t i = 0; i < layout.objects.size(); ++i) {
        const auto& o = layout.objects[i];
        const std::string where = "objects[" + std::to_string(i) + "]";
        if (o.id.empty()) issues.push_back(where + ".id: must not be empty");
        else if (!ids.insert(o.id).second) issues.push_back(where + ".id: duplicate id '" + o.id + "'");
        if (blank(o.prompt)) issues.push_back(where + ".prompt: must not be empty");
        if (o.mask.height() != layout.canvas_height || o.mask.width() != layout.canvas_width) {
            issues.push_back(where + ".mask: " + std::to_string(o.mask.height()) + "x" +
                             std::to_string(o.mask.width()) + " does not match canvas " +
                             std::to_string(layout.canvas_height) + "x" +
                             std::to_string(layout.canvas_width));
        } else if (!o.mask.any()) {
            issues.push_back(where + ".mask: empty");
        }
    }
    return issues;
}

std::vector<std::uint32_t> encode_rle(const BinaryMask& mask) {
    std::vector<std::uint32_t> runs;
    std::uint8_t current = 0;
    std::uint32_t length = 0;
    for (auto v : mask.data()) {
        if (v != current) {
            runs.push_back(length);
            current = v;
            length = 0;
        }
        ++length;
    }
    runs.push_back(length);
    return runs;
}

BinaryMask decode_rle(std::span<const std::uint32_t> runs, int height, int width) {
    const std::size_t total = static_cast<std::size_t>(height) * width;
    std::vector<std::uint8_t> data;
    data.reserve(total);
    std::uint8_t value = 0;
    for (auto run : runs) {
        if (data.size() + run > total) {
            throw Error(Errc::ParseError, "run lengths exceed mask size");
        }
        data.insert(data.end(), run, value);
        value ^= 1;
    }
    if (data.size() != total) {
        throw Error(Errc::ParseError, "run lengths cover " + std::to_string(data.size()) + " of " +
                                          std::to_string(total) + " pixels");
    }
    return BinaryMask(height, width, std::move(data));
}

namespace {

[[noreturn]] void parse_fail(const std::string& field, const std::string& what) {
    throw Error(Errc::ParseError, field + ": " + what);
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    static const auto table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        const std::string_view alphabet =
            "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (std::size_t i = 0; i < alphabet.size(); ++i) t[static_cast<unsigned char>(alphabet[i])] = static_cast<int>(i);
        return t;
    }();
    std::vector<std::uint8_t> out;
    unsigned buffer = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=' || std::isspace(static_cast<unsigned char>(ch))) continue;
        const int v = table[static_cast<unsigned char>(ch)];
        if (v < 0) throw Error(Errc::ParseError, "invalid base64 character");
        buffer = (buffer << 6) | static_cast<unsigned>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((buffer >> bits) & 0xFF));
        }
    }
    return out;
}

BinaryMask load_mask(const json& node, const std::string& field, int height, int width,
                     const std::filesystem::path& base_dir) {
    if (node.is_string()) {
        const auto ref = node.get<std::string>();
        constexpr std::string_view data_prefix = "data:image/png;base64,";
        GrayImage gray;
        try {
            if (ref.rfind(data_prefix, 0) == 0) {
                gray = decode_png_gray(base64_decode(std::string_view(ref).substr(data_prefix.size())));
            } else {
                gray = read_png_gray(base_dir / ref);
            }
        } catch (const Error& e) {
            parse_fail(field, e.what());
        }
        return gray_to_mask(gray);
    }
    if (node.is_object() && node.contains("rle")) {
        if (height <= 0 || width <= 0) parse_fail(field, "inline mask needs a valid canvas");
        const auto& runs = node.at("rle");
        if (!runs.is_array()) parse_fail(field + ".rle", "expected an array of run lengths");
        std::vector<std::uint32_t> counts;
        counts.reserve(runs.size());
        for (const auto& r : runs) {
            if (!r.is_number_unsigned()) parse_fail(field + ".rle", "run lengths must be non-negative integers");
            counts.push_back(r.get<std::uint32_t>());
        }
        try {
            return decode_rle(counts, height, width);
        } catch (const Error& e) {
            parse_fail(field + ".rle", e.what());
        }
    }
    parse_fail(field, "expected a PNG path, a PNG data URL or {\"rle\": [...]}");
}

const json& require(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) parse_fail(where.empty() ? key : where + "." + key, "missing");
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_string()) parse_fail(where.empty() ? key : where + "." + key, "expected a string");
    return v.get<std::string>();
}

int require_int(const json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_number_integer()) parse_fail(where + "." + key, "expected an integer");
    return v.get<int>();
}

} // namespace

Layout load_layout(std::string_view document, const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(document);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into a line/column pair.
        const std::size_t offset = std::min<std::size_t>(e.byte, document.size());
        const auto before = document.substr(0, offset > 0 ? offset - 1 : 0);
        const auto line = 1 + std::count(before.begin(), before.end(), '\n');
        const auto last_nl = before.rfind('\n');
        const auto column = last_nl == std::string_view::npos ? before.size() + 1 : before.size() - last_nl;
        throw Error(Errc::ParseError, "line " + std::to_string(line) + ", column " +
                                          std::to_string(column) + ": " + e.what());
    }
    if (!root.is_object()) parse_fail("<root>", "expected a JSON object");
    static const std::set<std::string> known{"canvas", "global_prompt", "objects"};
    for (const auto& [key, _] : root.items()) {
        if (!known.contains(key)) parse_fail(key, "unknown top-level key");
    }

    Layout layout;
    const auto& canvas = require(root, "canvas", "");
    if (!canvas.is_object()) parse_fail("canvas", "expected an object");
    layout.canvas_height = require_int(canvas, "h", "canvas");
    layout.canvas_width = require_int(canvas, "w", "canvas");
    layout.global_prompt = require_string(root, "global_prompt", "");

    const auto& objects = require(root, "objects", "");
    if (!objects.is_array()) parse_fail("objects", "expected an array");
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const std::string where = "objects[" + std::to_string(i) + "]";
        const auto& node = objects[i];
        if (!node.is_object()) parse_fail(where, "expected an object");
        ObjectSpec spec;
        spec.id = require_string(node, "id", where);
        spec.prompt = require_string(node, "prompt", where);
        const auto& seed = require(node, "seed", where);
        if (!seed.is_number_unsigned()) parse_fail(where + ".seed", "expected a non-negative integer");
        spec.seed = seed.get<std::uint64_t>();
        spec.mask = load_mask(require(node, "mask", where), where + ".mask", layout.canvas_height,
                              layout.canvas_width, base_dir);
        layout.objects.push_back(std::move(spec));
    }

    if (auto issues = validate(layout); !issues.empty()) {
        std::ostringstream msg;
        msg << "invalid layout:";
        for (const auto& issue : issues) msg << "\n  - " << issue;
        throw Error(Errc::ValidationError, msg.str());
    }
    const auto masks = layout.masks();
    for (const auto& [i, j] : overlap_pairs(masks)) {
        logger()->warn("objects '{}' and '{}' have overlapping masks; the later one takes precedence",
                       layout.objects[i].id, layout.objects[j].id);
    }
    return layout;
}

Layout load_layout_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot open layout " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_layout(buf.str(), path.parent_path());
}

namespace {

ordered_json layout_header(const Layout& layout) {
    ordered_json root;
    root["canvas"] = {{"h", layout.canvas_height}, {"w", layout.canvas_width}};
    root["global_prompt"] = layout.global_prompt;
    root["objects"] = ordered_json::array();
    return root;
}

std::string file_stem_for(const std::string& id) {
    std::string out;
    for (char c : id) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
    }
    return out.empty() ? "object" : out;
}

} // namespace

std::string save_layout(const Layout& layout) {
    auto root = layout_header(layout);
    for (const auto& o : layout.objects) {
        ordered_json obj;
        obj["id"] = o.id;
        obj["prompt"] = o.prompt;
        obj["seed"] = o.seed;
        obj["mask"] = {{"rle", encode_rle(o.mask)}};
        root["objects"].push_back(std::move(obj));
    }
    return root.dump(2) + "\n";
}

void save_layout_file(const Layout& layout, const std::filesystem::path& path) {
    const auto dir = path.parent_path();
    std::filesystem::create_directories(dir / "masks");
    auto root = layout_header(layout);
    std::set<std::string> used;
    for (std::size_t i = 0; i < layout.objects.size(); ++i) {
        const auto& o = layout.objects[i];
        std::string stem = file_stem_for(o.id);
        if (!used.insert(stem).second) stem += "_" + std::to_string(i);
        const std::string rel = "masks/" + stem + ".png";
        write_png(dir / rel, mask_to_gray(o.mask));
        ordered_json obj;
        obj["id"] = o.id;
        obj["prompt"] = o.prompt;
        obj["seed"] = o.seed;
        obj["mask"] = rel;
        root["objects"].push_back(std::move(obj));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    out << root.dump(2) << "\n";
}

} // namespace layoutgen
