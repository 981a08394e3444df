#pragma once

#include "error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace dehate {

using Dims = std::vector<std::size_t>;

inline std::size_t element_count(Dims const& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string dims_to_string(Dims const& dims) {
    std::string out = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(dims[i]);
    }
    return out + "]";
}

/// Dense row-major n-dimensional array. Every dimension is positive and the
/// payload length always equals the product of the dimensions.
template <class T>
class BasicTensor {
  public:
    using value_type = T;

    BasicTensor() : dims_{1}, data_(1, T{}) {}

    explicit BasicTensor(Dims dims, T fill = T{}) : dims_(std::move(dims)) {
        check_dims(dims_);
        data_.assign(element_count(dims_), fill);
    }

    BasicTensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
        check_dims(dims_);
        if (data_.size() != element_count(dims_))
            throw ShapeError("tensor payload length " + std::to_string(data_.size()) +
                             " does not match dims " + dims_to_string(dims_));
    }

    template <class U>
    static BasicTensor cast_from(BasicTensor<U> const& other) {
        std::vector<T> data(other.data().begin(), other.data().end());
        return BasicTensor(other.dims(), std::move(data));
    }

    Dims const& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<T const> data() const noexcept { return data_; }
    std::span<T> data() noexcept { return data_; }
    std::vector<T> const& vector() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    T const& operator[](std::size_t i) const { return data_[i]; }

    /// Rank-2 accessor.
    T& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
    T const& at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }

    /// Same payload viewed under new dims of identical element count.
    BasicTensor reshaped(Dims dims) const { return BasicTensor(std::move(dims), data_); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(BasicTensor const& a, BasicTensor const& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

  private:
    static void check_dims(Dims const& dims) {
        if (dims.empty()) throw ShapeError("tensor rank must be at least 1");
        for (auto d : dims)
            if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
    }

    Dims dims_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// True when both tensors have equal dims and byte-identical payloads
/// (distinguishes -0.0 from 0.0 and compares NaN payloads).
template <class T>
bool bit_identical(BasicTensor<T> const& a, BasicTensor<T> const& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

// ---------------------------------------------------------------------------
// DHT1 binary format
//
//   "DHT1" | dtype:u8 (1 = f32) | rank:u8 | 0x00 0x00 | rank x u32 LE dims |
//   row-major f32 LE payload
// ---------------------------------------------------------------------------

namespace dht1 {

inline constexpr std::array<char, 4> magic{'D', 'H', 'T', '1'};
inline constexpr std::uint8_t dtype_f32 = 1;
inline constexpr std::size_t header_size = 8;

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(char const* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

inline std::vector<char> encode(Tensor const& t) {
    if (t.rank() > 255) throw ArgumentError("DHT1 supports rank <= 255");
    std::vector<char> out(magic.begin(), magic.end());
    out.push_back(static_cast<char>(dtype_f32));
    out.push_back(static_cast<char>(t.rank()));
    out.push_back(0);
    out.push_back(0);
    for (auto d : t.dims()) {
        if (d > 0xffffffffu) throw ArgumentError("DHT1 dims must fit in u32");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.reserve(out.size() + 4 * t.size());
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Tensor decode(std::span<char const> bytes, std::string const& origin = "<memory>") {
    if (bytes.size() < header_size || !std::equal(magic.begin(), magic.end(), bytes.begin()))
        throw FormatError("not a DHT1 tensor (bad magic): " + origin);
    auto dtype = static_cast<std::uint8_t>(bytes[4]);
    if (dtype != dtype_f32)
        throw FormatError("unsupported DHT1 dtype " + std::to_string(dtype) + ": " + origin);
    std::size_t rank = static_cast<std::uint8_t>(bytes[5]);
    if (rank == 0) throw FormatError("DHT1 rank must be positive: " + origin);
    if (bytes.size() < header_size + 4 * rank)
        throw TruncationError("DHT1 header truncated: " + origin);
    Dims dims(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = get_u32(bytes.data() + header_size + 4 * i);
        if (dims[i] == 0) throw FormatError("DHT1 dims must be positive: " + origin);
    }
    std::size_t n = element_count(dims);
    std::size_t payload_at = header_size + 4 * rank;
    if (bytes.size() - payload_at != 4 * n)
        throw TruncationError("DHT1 payload holds " + std::to_string(bytes.size() - payload_at) +
                              " bytes, expected " + std::to_string(4 * n) + ": " + origin);
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i)
        data[i] = std::bit_cast<float>(get_u32(bytes.data() + payload_at + 4 * i));
    return Tensor(std::move(dims), std::move(data));
}

} // namespace dht1

inline void tensor_write(Tensor const& t, std::filesystem::path const& path) {
    auto bytes = dht1::encode(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open tensor for writing", path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing tensor", path.string());
}

inline std::vector<char> read_file_bytes(std::filesystem::path const& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file", path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Tensor tensor_read(std::filesystem::path const& path) {
    auto bytes = read_file_bytes(path);
    return dht1::decode(bytes, path.string());
}

/// Bilinear resize of a rank-2 map with corner-aligned sampling: output row i
/// samples source row i * (h - 1) / (out_h - 1), so the first and last rows
/// and columns map exactly onto the source edges. A target extent of 1 samples
/// index 0. Each output is clamped to the range of its four source taps.
inline Tensor bilinear_resize(Tensor const& src, std::size_t out_h, std::size_t out_w) {
    if (src.rank() != 2) throw ShapeError("bilinear_resize expects a rank-2 tensor, got " + dims_to_string(src.dims()));
    if (out_h == 0 || out_w == 0) throw ArgumentError("bilinear_resize target must be at least 1x1");
    std::size_t const h = src.dim(0), w = src.dim(1);
    if (h == out_h && w == out_w) return src;

    auto source_coord = [](std::size_t i, std::size_t in, std::size_t out) {
        if (out == 1 || in == 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    };

    Tensor dst({out_h, out_w});
    for (std::size_t i = 0; i < out_h; ++i) {
        double y = source_coord(i, h, out_h);
        auto y0 = static_cast<std::size_t>(std::floor(y));
        std::size_t y1 = std::min(y0 + 1, h - 1);
        double fy = y - static_cast<double>(y0);
        for (std::size_t j = 0; j < out_w; ++j) {
            double x = source_coord(j, w, out_w);
            auto x0 = static_cast<std::size_t>(std::floor(x));
            std::size_t x1 = std::min(x0 + 1, w - 1);
            double fx = x - static_cast<double>(x0);
            double a = src.at(y0, x0), b = src.at(y0, x1), c = src.at(y1, x0), d = src.at(y1, x1);
            double top = a + (b - a) * fx;
            double bottom = c + (d - c) * fx;
            double v = top + (bottom - top) * fy;
            double lo = std::min({a, b, c, d}), hi = std::max({a, b, c, d});
            dst.at(i, j) = static_cast<float>(std::clamp(v, lo, hi));
        }
    }
    return dst;
}

} // namespace dehate
