#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace layoutgen {

/// H×W grid of {0,1}, row-major.
class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);
    /// Throws ValidationError if any value is not 0 or 1.
    BinaryMask(int height, int width, std::vector<std::uint8_t> data);

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::uint8_t at(int y, int x) const { return data_[index(y, x)]; }
    void set(int y, int x, bool on) { data_[index(y, x)] = on ? 1 : 0; }

    [[nodiscard]] std::span<const std::uint8_t> data() const noexcept { return data_; }
    [[nodiscard]] std::size_t count() const noexcept;
    [[nodiscard]] bool any() const noexcept { return count() > 0; }
    [[nodiscard]] bool same_shape(const BinaryMask& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    [[nodiscard]] BinaryMask operator&(const BinaryMask& other) const;
    [[nodiscard]] BinaryMask operator|(const BinaryMask& other) const;
    [[nodiscard]] BinaryMask operator~() const;

    bool operator==(const BinaryMask&) const = default;

  private:
    [[nodiscard]] std::size_t index(int y, int x) const {
        return static_cast<std::size_t>(y) * width_ + x;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Axis-aligned box in [x, y, w, h] form.
struct BBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const BBox&) const = default;
};

struct ObjectSpec {
    std::string id;
    std::string prompt;
    std::uint64_t seed = 0;
    BinaryMask mask;

    bool operator==(const ObjectSpec&) const = default;
};

struct Layout {
    int canvas_height = 0;
    int canvas_width = 0;
    std::string global_prompt;
    std::vector<ObjectSpec> objects;

    bool operator==(const Layout&) const = default;

    [[nodiscard]] std::vector<BinaryMask> masks() const;
    [[nodiscard]] const ObjectSpec* find(std::string_view id) const;
};

/// Tightest box around the 1-pixels. Throws EmptyMask.
[[nodiscard]] BBox bbox(const BinaryMask& mask);

[[nodiscard]] double mask_area_fraction(const BinaryMask& mask) noexcept;

/// Pixel is 1 iff it belongs to none of `masks`. Throws ShapeMismatch.
/// With no masks the result cannot be sized, so the caller passes the shape.
[[nodiscard]] BinaryMask background_mask(std::span<const BinaryMask> masks);
[[nodiscard]] BinaryMask background_mask(std::span<const BinaryMask> masks, int height,
                                         int width);

/// Index pairs (i < j) of masks that share at least one pixel.
[[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>>
overlap_pairs(std::span<const BinaryMask> masks);

/// Area-average pooling onto a target grid; a cell is 1 iff its mean
/// coverage is strictly greater than 0.5.
[[nodiscard]] BinaryMask downsample_mask(const BinaryMask& mask, int target_h, int target_w);

/// Nearest-neighbour resize (sample at cell centres).
[[nodiscard]] BinaryMask resize_nearest(const BinaryMask& mask, int target_h, int target_w);

/// Every violated invariant, empty if the layout is valid.
[[nodiscard]] std::vector<std::string> validate(const Layout& layout);

// Layout document I/O. Masks are either a relative PNG path (resolved
// against `base_dir`) or an inline object {"rle": [run lengths]} with
// row-major runs that start with zeros.

[[nodiscard]] Layout load_layout(std::string_view document, const std::filesystem::path& base_dir);
[[nodiscard]] Layout load_layout_file(const std::filesystem::path& path);

/// Self-contained document with inline run-length masks.
[[nodiscard]] std::string save_layout(const Layout& layout);
/// Writes `path` plus one PNG per object under `<dir>/masks/`.
void save_layout_file(const Layout& layout, const std::filesystem::path& path);

[[nodiscard]] std::vector<std::uint32_t> encode_rle(const BinaryMask& mask);
[[nodiscard]] BinaryMask decode_rle(std::span<const std::uint32_t> runs, int height, int width);

} // namespace layoutgen
