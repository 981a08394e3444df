#pragma once

// Two-step anonymizing blur. Step one blacks out every pixel of the coarse
// mask in a copy of the image; step two replaces each pixel of the strict mask
// with the mean colour of the surrounding box, read from the blacked-out
// snapshot.

#include "attention.hpp"
#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cstdint>
#include <utility>

namespace dehate::redact {

struct RedactionParams {
    float tau_black = 0.4f;
    float tau_avg = 0.4f;
    int box_radius = 7;

    void validate() const {
        if (!(tau_black > 0.0f && tau_black <= 1.0f)) throw ArgumentError("tau_black must lie in (0,1]");
        if (!(tau_avg > 0.0f && tau_avg <= 1.0f)) throw ArgumentError("tau_avg must lie in (0,1]");
        if (tau_avg < tau_black) throw ArgumentError("tau_avg must be >= tau_black");
        if (box_radius < 1) throw ArgumentError("box_radius must be >= 1");
    }
};

inline ImageRGB8 blackout(ImageRGB8 const& img, BinaryMask const& mask) {
    if (!same_dims(img, mask)) throw ArgumentError("blackout: mask dims differ from image dims");
    ImageRGB8 out = img;
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            if (mask.get(y, x)) out.set(x, y, {0, 0, 0});
    return out;
}

/// Rounded mean (half away from zero) of `sum` over `count` non-negative samples.
inline std::uint8_t rounded_mean(std::uint64_t sum, std::uint64_t count) {
    return static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
}

inline ImageRGB8 box_average_fill(ImageRGB8 const& base, BinaryMask const& targets, int box_radius) {
    if (!same_dims(base, targets)) throw ArgumentError("box_average_fill: target dims differ from image dims");
    if (box_radius < 1) throw ArgumentError("box_radius must be >= 1");
    std::size_t const W = base.width(), H = base.height();

    // Summed-area table per channel over the unmodified base.
    std::vector<std::uint64_t> sat((W + 1) * (H + 1) * 3, 0);
    auto at = [&](std::size_t x, std::size_t y, std::size_t c) -> std::uint64_t& { return sat[((y * (W + 1)) + x) * 3 + c]; };
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                at(x + 1, y + 1, c) = base.channel(x, y, c) + at(x, y + 1, c) + at(x + 1, y, c) - at(x, y, c);

    ImageRGB8 out = base;
    auto r = static_cast<std::size_t>(box_radius);
    parallel_for(H, [&](std::size_t y) {
        std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(H, y + r + 1);
        for (std::size_t x = 0; x < W; ++x) {
            if (!targets.get(y, x)) continue;
            std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(W, x + r + 1);
            std::uint64_t count = (y1 - y0) * (x1 - x0);
            Rgb c{};
            for (std::size_t ch = 0; ch < 3; ++ch) {
                std::uint64_t sum = at(x1, y1, ch) - at(x0, y1, ch) - at(x1, y0, ch) + at(x0, y0, ch);
                c[ch] = rounded_mean(sum, count);
            }
            out.set(x, y, c);
        }
    });
    return out;
}

/// Returns the anonymized image and the step-one (blackout) mask.
inline std::pair<ImageRGB8, BinaryMask> anonymize(ImageRGB8 const& img, Heatmap const& h, RedactionParams const& params) {
    params.validate();
    if (h.height() != img.height() || h.width() != img.width())
        throw ArgumentError("anonymize: heatmap dims differ from image dims");
    BinaryMask coarse = attention::binarize(h, params.tau_black);
    BinaryMask strict = attention::binarize(h, params.tau_avg);
    ImageRGB8 out = box_average_fill(blackout(img, coarse), strict, params.box_radius);
    return {std::move(out), std::move(coarse)};
}

inline BinaryMask recover_mask(ImageRGB8 const& original, ImageRGB8 const& blurred, int per_channel_tol) {
    if (original.width() != blurred.width() || original.height() != blurred.height())
        throw ArgumentError("recover_mask: image dims differ");
    if (per_channel_tol < 0) throw ArgumentError("per-channel tolerance must be >= 0");
    BinaryMask m(original.height(), original.width());
    for (std::size_t y = 0; y < original.height(); ++y)
        for (std::size_t x = 0; x < original.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c)
                if (std::abs(int(original.channel(x, y, c)) - int(blurred.channel(x, y, c))) > per_channel_tol) {
                    m.set(y, x);
                    break;
                }
    return m;
}

} // namespace dehate::redact
