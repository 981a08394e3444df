#pragma once

#include "error.hpp"
#include "tensor.hpp"

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dehate {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster, row-major.
class ImageRGB8 {
  public:
    ImageRGB8() = default;
    ImageRGB8(std::size_t width, std::size_t height, Rgb fill = {0, 0, 0})
        : width_(width), height_(height), pixels_(width * height * 3) {
        if (width == 0 || height == 0) throw ArgumentError("image dims must be positive");
        for (std::size_t i = 0; i < width * height; ++i) set(i % width, i / width, fill);
    }
    /// Wraps interleaved RGB bytes, row-major.
    static ImageRGB8 from_bytes(std::size_t width, std::size_t height, std::vector<std::uint8_t> pixels) {
        if (width == 0 || height == 0) throw ArgumentError("image dims must be positive");
        if (pixels.size() != width * height * 3) throw ArgumentError("image payload does not match dims");
        ImageRGB8 img;
        img.width_ = width;
        img.height_ = height;
        img.pixels_ = std::move(pixels);
        return img;
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::vector<std::uint8_t> const& bytes() const noexcept { return pixels_; }

    Rgb get(std::size_t x, std::size_t y) const {
        auto const* p = &pixels_[(y * width_ + x) * 3];
        return {p[0], p[1], p[2]};
    }
    void set(std::size_t x, std::size_t y, Rgb c) {
        auto* p = &pixels_[(y * width_ + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    std::uint8_t channel(std::size_t x, std::size_t y, std::size_t c) const { return pixels_[(y * width_ + x) * 3 + c]; }

    friend bool operator==(ImageRGB8 const&, ImageRGB8 const&) = default;

  private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

/// H x W booleans; true marks a hateful (masked) pixel.
class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(std::size_t height, std::size_t width, bool fill = false)
        : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool get(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
    void set(std::size_t y, std::size_t x, bool v = true) { bits_[y * width_ + x] = v ? 1 : 0; }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    void set_index(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits_) n += b;
        return n;
    }

    /// True when every set bit of this mask is also set in `other`.
    bool subset_of(BinaryMask const& other) const {
        if (height_ != other.height_ || width_ != other.width_) return false;
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i] && !other.bits_[i]) return false;
        return true;
    }

    BinaryMask united(BinaryMask const& other) const {
        if (height_ != other.height_ || width_ != other.width_) throw ArgumentError("mask dims differ");
        BinaryMask out = *this;
        for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] |= other.bits_[i];
        return out;
    }

    friend bool operator==(BinaryMask const&, BinaryMask const&) = default;

  private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Rank-2 map of hate-attention intensities in [0,1]. Value 1.0 is the
/// saturated level (grayscale 255 when exported).
class Heatmap {
  public:
    Heatmap() = default;
    explicit Heatmap(Tensor values) : values_(std::move(values)) {
        if (values_.rank() != 2) throw ShapeError("heatmap must be rank 2, got " + dims_to_string(values_.dims()));
        for (float v : values_.data())
            if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("heatmap values must lie in [0,1]");
    }

    Tensor const& values() const noexcept { return values_; }
    std::size_t height() const { return values_.dim(0); }
    std::size_t width() const { return values_.dim(1); }
    float at(std::size_t y, std::size_t x) const { return values_.at(y, x); }

  private:
    Tensor values_{{1, 1}};
};

inline bool same_dims(ImageRGB8 const& img, BinaryMask const& m) {
    return img.height() == m.height() && img.width() == m.width();
}

/// 8-bit gray level for a [0,1] intensity, rounding half away from zero.
inline std::uint8_t to_gray_level(float v) {
    return static_cast<std::uint8_t>(std::clamp(std::round(255.0 * static_cast<double>(v)), 0.0, 255.0));
}

// ---------------------------------------------------------------------------
// PNG I/O (libpng simplified API)
// ---------------------------------------------------------------------------

namespace png_io {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::vector<std::uint8_t> read(std::filesystem::path const& path, std::uint32_t format, std::size_t channels,
                                      std::size_t& width, std::size_t& height) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        std::string msg = image.message;
        png_image_free(&image);
        if (!std::filesystem::exists(path)) throw IoError("cannot open PNG", path.string());
        throw FormatError("unreadable PNG " + path.string() + ": " + msg);
    }
    image.format = format;
    width = image.width;
    height = image.height;
    std::vector<std::uint8_t> buffer(width * height * channels);
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("unreadable PNG " + path.string() + ": " + msg);
    }
    return buffer;
}

inline void write(std::filesystem::path const& path, std::uint32_t format, std::size_t width, std::size_t height,
                  std::uint8_t const* data) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("failed writing PNG (" + msg + ")", path.string());
    }
}

} // namespace detail

inline ImageRGB8 read_rgb(std::filesystem::path const& path) {
    std::size_t w = 0, h = 0;
    auto px = detail::read(path, PNG_FORMAT_RGB, 3, w, h);
    return ImageRGB8::from_bytes(w, h, std::move(px));
}

inline void write_rgb(std::filesystem::path const& path, ImageRGB8 const& img) {
    detail::write(path, PNG_FORMAT_RGB, img.width(), img.height(), img.bytes().data());
}

inline GrayImage read_gray(std::filesystem::path const& path) {
    GrayImage g;
    g.pixels = detail::read(path, PNG_FORMAT_GRAY, 1, g.width, g.height);
    return g;
}

inline void write_gray(std::filesystem::path const& path, GrayImage const& g) {
    detail::write(path, PNG_FORMAT_GRAY, g.width, g.height, g.pixels.data());
}

} // namespace png_io

/// Masks on disk: grayscale PNG, 255 = masked, 0 = clean. On read any level
/// >= 128 counts as masked.
inline void write_mask_png(std::filesystem::path const& path, BinaryMask const& m) {
    png_io::GrayImage g{m.width(), m.height(), std::vector<std::uint8_t>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i) g.pixels[i] = m[i] ? 255 : 0;
    png_io::write_gray(path, g);
}

inline BinaryMask read_mask_png(std::filesystem::path const& path) {
    auto g = png_io::read_gray(path);
    BinaryMask m(g.height, g.width);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) m.set_index(i, g.pixels[i] >= 128);
    return m;
}

} // namespace dehate
