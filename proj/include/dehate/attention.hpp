#pragma once

// Cross-attention heatmaps: per-token attention stacks are resized to image
// resolution, summed over layers, heads and timesteps, min-max normalized and
// thresholded into binary masks.

#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace dehate::attention {

inline constexpr float default_tau = 0.4f;

/// maps has dims [tokens, layers, heads, timesteps, h, w].
struct AttentionStack {
    Tensor maps;
    std::vector<std::string> tokens;
    std::size_t image_h = 0;
    std::size_t image_w = 0;

    std::size_t token_count() const { return maps.dim(0); }
};

inline void validate(AttentionStack const& s) {
    if (s.maps.rank() != 6)
        throw FormatError("attention stack must be rank 6 [T,L,H,S,h,w], got " + dims_to_string(s.maps.dims()));
    if (s.tokens.size() != s.maps.dim(0))
        throw MetadataError("metadata lists " + std::to_string(s.tokens.size()) + " tokens but the stack holds " +
                            std::to_string(s.maps.dim(0)));
    if (s.image_h == 0 || s.image_w == 0) throw MetadataError("image dims must be positive");
    for (float v : s.maps.data())
        if (!(v >= 0.0f) || !std::isfinite(v)) throw DomainError("attention values must be finite and non-negative");
}

inline AttentionStack load_stack(std::filesystem::path const& tensor_path, std::filesystem::path const& meta_path) {
    AttentionStack s;
    s.maps = tensor_read(tensor_path);
    if (s.maps.rank() != 6)
        throw FormatError("attention stack must be rank 6 [T,L,H,S,h,w], got " + dims_to_string(s.maps.dims()));
    std::ifstream in(meta_path);
    if (!in) throw IoError("cannot open attention metadata", meta_path.string());
    nlohmann::json meta;
    try {
        in >> meta;
        s.tokens = meta.at("tokens").get<std::vector<std::string>>();
        s.image_h = meta.at("image_h").get<std::size_t>();
        s.image_w = meta.at("image_w").get<std::size_t>();
    } catch (nlohmann::json::exception const& e) {
        throw MetadataError("bad attention metadata " + meta_path.string() + ": " + e.what());
    }
    validate(s);
    return s;
}

inline void save_stack(AttentionStack const& s, std::filesystem::path const& tensor_path,
                       std::filesystem::path const& meta_path) {
    validate(s);
    tensor_write(s.maps, tensor_path);
    std::ofstream out(meta_path);
    if (!out) throw IoError("cannot write attention metadata", meta_path.string());
    out << nlohmann::json{{"tokens", s.tokens}, {"image_h", s.image_h}, {"image_w", s.image_w}}.dump() << "\n";
}

/// Indices of every token whose text equals one of `words` (exact match).
inline std::vector<std::size_t> tokens_matching(AttentionStack const& s, std::vector<std::string> const& words) {
    std::set<std::string> wanted(words.begin(), words.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < s.tokens.size(); ++i)
        if (wanted.count(s.tokens[i])) out.push_back(i);
    return out;
}

/// Min-max normalization of a raw sum; a flat sum yields all zeros.
inline Heatmap normalize(std::vector<double> const& sum, std::size_t h, std::size_t w) {
    double lo = sum.front(), hi = sum.front();
    for (double v : sum) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out({h, w});
    if (hi > lo)
        for (std::size_t i = 0; i < sum.size(); ++i)
            out[i] = static_cast<float>((sum[i] - lo) / (hi - lo));
    return Heatmap(std::move(out));
}

inline Heatmap aggregate(AttentionStack const& s, std::vector<std::size_t> const& selected_tokens) {
    if (selected_tokens.empty()) throw ArgumentError("aggregate needs at least one selected token");
    validate(s);
    std::set<std::size_t> tokens(selected_tokens.begin(), selected_tokens.end());
    for (auto t : tokens)
        if (t >= s.token_count())
            throw ArgumentError("token index " + std::to_string(t) + " out of range (T=" +
                                std::to_string(s.token_count()) + ")");

    auto const& d = s.maps.dims();
    std::size_t const per_token = d[1] * d[2] * d[3];
    std::size_t const mh = d[4], mw = d[5];
    std::size_t const H = s.image_h, W = s.image_w;
    std::vector<std::size_t> order(tokens.begin(), tokens.end());

    // Per-token partial sums run in parallel; the final reduction is in token order.
    std::vector<std::vector<double>> partial(order.size(), std::vector<double>(H * W, 0.0));
    parallel_for(order.size(), [&](std::size_t k) {
        std::size_t base = order[k] * per_token * mh * mw;
        auto& acc = partial[k];
        for (std::size_t m = 0; m < per_token; ++m) {
            auto first = s.maps.data().begin() + static_cast<std::ptrdiff_t>(base + m * mh * mw);
            Tensor map({mh, mw}, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(mh * mw)));
            Tensor up = bilinear_resize(map, H, W);
            for (std::size_t i = 0; i < H * W; ++i) acc[i] += up[i];
        }
    });
    std::vector<double> sum(H * W, 0.0);
    for (auto const& p : partial)
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p[i];
    return normalize(sum, H, W);
}

inline BinaryMask binarize(Heatmap const& h, float tau) {
    if (!(tau > 0.0f && tau <= 1.0f)) throw ArgumentError("threshold must lie in (0,1], got " + std::to_string(tau));
    BinaryMask m(h.height(), h.width());
    auto const& v = h.values();
    for (std::size_t i = 0; i < v.size(); ++i) m.set_index(i, v[i] >= tau);
    return m;
}

inline png_io::GrayImage to_gray(Heatmap const& h) {
    png_io::GrayImage g{h.width(), h.height(), std::vector<std::uint8_t>(h.values().size())};
    for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] = to_gray_level(h.values()[i]);
    return g;
}

inline void export_gray(Heatmap const& h, std::filesystem::path const& path) { png_io::write_gray(path, to_gray(h)); }

} // namespace dehate::attention
