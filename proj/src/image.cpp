#include "layoutgen/image.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/layout.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>
#include <string>

namespace layoutgen {

Image::Image(int height, int width, float fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
        throw Error(Errc::InvalidRange, "image dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

Image Image::crop(int x, int y, int w, int h) const {
    if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > width_ || y + h > height_) {
        throw Error(Errc::InvalidRange, "crop rectangle outside image");
    }
    Image out(h, w);
    for (int r = 0; r < h; ++r) {
        const auto* src = data_.data() + index(y + r, x, 0);
        std::copy(src, src + static_cast<std::size_t>(w) * 3, out.data_.data() + out.index(r, 0, 0));
    }
    return out;
}

std::uint8_t to_byte(float normalized) noexcept {
    const float v = std::clamp((normalized + 1.0f) * 127.5f, 0.0f, 255.0f);
    return static_cast<std::uint8_t>(std::lround(v));
}

float from_byte(std::uint8_t value) noexcept { return static_cast<float>(value) / 127.5f - 1.0f; }

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

thread_local std::string png_message;

[[noreturn]] void on_png_error(png_structp png, png_const_charp message) {
    png_message = message ? message : "";
    png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw Error(Errc::IoError, "cannot open " + path.string());
    }
    return f;
}

void write_rows(const std::filesystem::path& path, int height, int width, int color_type,
                int channels, const std::vector<std::uint8_t>& pixels) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(Errc::IoError, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(Errc::IoError, "failed writing " + path.string() + ": " + png_message);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + y * stride));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Decoded 8-bit RGB or gray pixels.
struct RawPng {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

struct MemoryCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<MemoryCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes.size()) {
        png_error(png, "truncated PNG data");
    }
    std::copy_n(cursor->bytes.data() + cursor->offset, length, out);
    cursor->offset += length;
}

RawPng decode_raw(std::span<const std::uint8_t> bytes, bool want_gray, const std::string& what) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw Error(Errc::IoError, what + " is not a PNG image");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(Errc::IoError, "libpng initialisation failed");
    }
    MemoryCursor cursor{bytes, 0};
    RawPng out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(Errc::IoError, "failed decoding " + what + ": " + png_message);
    }
    png_set_read_fn(png, &cursor, read_from_memory);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
    if (want_gray && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (!want_gray && is_gray) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.pixels.resize(stride * out.height);
    for (int y = 0; y < out.height; ++y) {
        png_read_row(png, out.pixels.data() + y * stride, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    auto file = open_file(path, "rb");
    std::vector<std::uint8_t> bytes;
    std::array<std::uint8_t, 65536> chunk{};
    std::size_t n = 0;
    while ((n = std::fread(chunk.data(), 1, chunk.size(), file.get())) > 0) {
        bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(n));
    }
    return bytes;
}

} // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
    std::vector<std::uint8_t> bytes(image.data().size());
    std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_byte);
    write_rows(path, image.height(), image.width(), PNG_COLOR_TYPE_RGB, 3, bytes);
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
    write_rows(path, image.height, image.width, PNG_COLOR_TYPE_GRAY, 1, image.pixels);
}

void write_label_png(const std::filesystem::path& path, int height, int width,
                     const std::vector<int>& labels) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette{{
        {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200},
        {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {128, 128, 128},
    }};
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(height) * width * 3);
    for (std::size_t i = 0; i < labels.size() && i * 3 < bytes.size(); ++i) {
        const auto& c = palette[static_cast<std::size_t>(labels[i]) % palette.size()];
        std::copy(c.begin(), c.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i * 3));
    }
    write_rows(path, height, width, PNG_COLOR_TYPE_RGB, 3, bytes);
}

Image read_png_rgb(const std::filesystem::path& path) {
    const RawPng raw = decode_raw(slurp(path), false, path.string());
    Image out(raw.height, raw.width);
    std::transform(raw.pixels.begin(), raw.pixels.end(), out.data().begin(), from_byte);
    return out;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
    RawPng raw = decode_raw(slurp(path), true, path.string());
    return GrayImage{raw.height, raw.width, std::move(raw.pixels)};
}

GrayImage decode_png_gray(std::span<const std::uint8_t> bytes) {
    RawPng raw = decode_raw(bytes, true, "PNG data");
    return GrayImage{raw.height, raw.width, std::move(raw.pixels)};
}

GrayImage mask_to_gray(const BinaryMask& mask) {
    GrayImage g{mask.height(), mask.width(), {}};
    g.pixels.reserve(mask.size());
    for (auto v : mask.data()) g.pixels.push_back(v ? 255 : 0);
    return g;
}

BinaryMask gray_to_mask(const GrayImage& gray) {
    std::vector<std::uint8_t> bits(gray.pixels.size());
    std::transform(gray.pixels.begin(), gray.pixels.end(), bits.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(v >= 128 ? 1 : 0); });
    return BinaryMask(gray.height, gray.width, std::move(bits));
}

} // namespace layoutgen
