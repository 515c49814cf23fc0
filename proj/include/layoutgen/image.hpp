#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace layoutgen {

class BinaryMask;

/// RGB image in the codec's normalized range [-1, 1], row-major HWC.
class Image {
  public:
    Image() = default;
    Image(int height, int width, float fill = -1.0f);

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    [[nodiscard]] float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    [[nodiscard]] std::vector<float>& data() noexcept { return data_; }
    [[nodiscard]] const std::vector<float>& data() const noexcept { return data_; }

    /// Copy of the rectangle [x, x+w) × [y, y+h).
    [[nodiscard]] Image crop(int x, int y, int w, int h) const;

    bool operator==(const Image&) const = default;

  private:
    [[nodiscard]] std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

/// 8-bit grayscale raster, used for mask files and debug heatmaps.
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;
};

[[nodiscard]] std::uint8_t to_byte(float normalized) noexcept;
[[nodiscard]] float from_byte(std::uint8_t value) noexcept;

void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);
/// Indexed-color rendering of a label map (one color per label).
void write_label_png(const std::filesystem::path& path, int height, int width,
                     const std::vector<int>& labels);

[[nodiscard]] Image read_png_rgb(const std::filesystem::path& path);
/// Reads any PNG and converts to 8-bit luminance.
[[nodiscard]] GrayImage read_png_gray(const std::filesystem::path& path);
[[nodiscard]] GrayImage decode_png_gray(std::span<const std::uint8_t> bytes);

[[nodiscard]] GrayImage mask_to_gray(const BinaryMask& mask);
/// Values >= 128 become 1.
[[nodiscard]] BinaryMask gray_to_mask(const GrayImage& gray);

} // namespace layoutgen
