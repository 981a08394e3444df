#pragma once

// Desk-scale text-conditioned masker.
//
//   image -> patches -> frozen encoder (patch projection + position table +
//   residual mixing blocks) -> skip activations X_1..X_B and a summary token.
//   The decoder starts from the broadcast summary token; block j concatenates
//   the matching skip activation (deepest first), mixes back to the embedding
//   width, applies FiLM from the span condition and a ReLU. A linear head
//   emits one logit per pixel of each patch; sigmoid gives the heatmap.
//
// The condition vector is the learnable projection of the mean of the hate
// span embeddings.

#include "autodiff.hpp"
#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "tensor.hpp"
#include "textproc.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dehate::masker {

inline constexpr float default_tau = 0.5f;

struct MaskerConfig {
    int image_size = 32;
    int patch_size = 4;
    int embed_dim = 32;
    int encoder_blocks = 2;
    int decoder_blocks = 2;
    int span_embed_dim = 32;
    std::uint32_t seed = 42;

    void validate() const {
        if (image_size < 1 || patch_size < 1 || embed_dim < 1 || encoder_blocks < 1 || span_embed_dim < 1)
            throw ConfigError("masker config values must be positive");
        if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
        if (decoder_blocks != encoder_blocks) throw ConfigError("decoder_blocks must equal encoder_blocks");
    }

    std::size_t grid() const { return static_cast<std::size_t>(image_size / patch_size); }
    std::size_t patches() const { return grid() * grid(); }
    std::size_t patch_pixels() const { return static_cast<std::size_t>(patch_size * patch_size); }
    std::size_t patch_values() const { return 3 * patch_pixels(); }
    std::size_t width() const { return static_cast<std::size_t>(embed_dim); }

    friend bool operator==(MaskerConfig const&, MaskerConfig const&) = default;
};

inline nlohmann::json to_json(MaskerConfig const& c) {
    return {{"image_size", c.image_size},         {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},           {"encoder_blocks", c.encoder_blocks},
            {"decoder_blocks", c.decoder_blocks}, {"span_embed_dim", c.span_embed_dim},
            {"seed", c.seed}};
}

inline MaskerConfig config_from_json(nlohmann::json const& j) {
    MaskerConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.encoder_blocks = j.at("encoder_blocks").get<int>();
    c.decoder_blocks = j.at("decoder_blocks").get<int>();
    c.span_embed_dim = j.at("span_embed_dim").get<int>();
    c.seed = j.at("seed").get<std::uint32_t>();
    c.validate();
    return c;
}

struct ParamSpec {
    std::string name;
    Dims dims;
    bool frozen;
};

/// Every parameter tensor in initialization order.
inline std::vector<ParamSpec> parameter_layout(MaskerConfig const& c) {
    c.validate();
    std::size_t const D = c.width(), P = c.patches(), S = static_cast<std::size_t>(c.span_embed_dim);
    std::vector<ParamSpec> out;
    out.push_back({"encoder.patch", {c.patch_values(), D}, true});
    out.push_back({"encoder.position", {P, D}, true});
    for (int b = 0; b < c.encoder_blocks; ++b) out.push_back({"encoder.block" + std::to_string(b) + ".mix", {D, D}, true});
    out.push_back({"projection.weight", {S, D}, false});
    out.push_back({"projection.bias", {D}, false});
    for (int j = 0; j < c.decoder_blocks; ++j) {
        auto p = "decoder.block" + std::to_string(j);
        out.push_back({p + ".mix", {2 * D, D}, false});
        out.push_back({p + ".bias", {D}, false});
        out.push_back({p + ".film.gamma_weight", {D, D}, false});
        out.push_back({p + ".film.gamma_bias", {D}, false});
        out.push_back({p + ".film.beta_weight", {D, D}, false});
        out.push_back({p + ".film.beta_bias", {D}, false});
    }
    out.push_back({"head.weight", {D, c.patch_pixels()}, false});
    out.push_back({"head.bias", {c.patch_pixels()}, false});
    return out;
}

struct MaskerModel {
    MaskerConfig config;
    /// Same order as parameter_layout(config).
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<bool> frozen;

    Tensor& param(std::string const& name) { return params.at(index_of(name)).second; }
    Tensor const& param(std::string const& name) const { return params.at(index_of(name)).second; }

    std::size_t index_of(std::string const& name) const {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].first == name) return i;
        throw ArgumentError("no parameter named '" + name + "'");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto const& [name, t] : params) n += t.size();
        return n;
    }
};

/// Uniform(-0.1, 0.1) from the top 24 bits of each mt19937 draw.
inline float draw_weight(std::mt19937& rng) {
    float u = static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
    return -0.1f + 0.2f * u;
}

inline MaskerModel init(MaskerConfig const& config) {
    config.validate();
    MaskerModel m;
    m.config = config;
    std::mt19937 rng(config.seed);
    for (auto const& spec : parameter_layout(config)) {
        Tensor t(spec.dims);
        for (auto& v : t.data()) v = draw_weight(rng);
        m.params.emplace_back(spec.name, std::move(t));
        m.frozen.push_back(spec.frozen);
    }
    return m;
}

/// FNV-1a over the frozen encoder tensors (names, dims and payload bytes).
inline std::uint64_t frozen_checksum(MaskerModel const& m) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&](void const* p, std::size_t n) {
        auto const* b = static_cast<unsigned char const*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (!m.frozen[i]) continue;
        auto const& [name, t] = m.params[i];
        mix(name.data(), name.size());
        for (auto d : t.dims()) mix(&d, sizeof d);
        mix(t.data().data(), t.size() * sizeof(float));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Span embeddings
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string const& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return h;
}

/// Signed hashed bag of words over the normalized span words, L2-normalized.
/// Word w lands in bucket fnv1a64(w) % dim with sign - when bit 63 of the
/// hash is set. If the signed counts cancel to zero the unsigned profile is
/// used instead.
inline std::vector<float> embed_span(text::HateSpan const& span, std::size_t dim) {
    if (span.words.empty()) throw ArgumentError("cannot embed an empty span");
    if (dim == 0) throw ArgumentError("embedding dimension must be positive");
    std::vector<double> signed_counts(dim, 0.0), counts(dim, 0.0);
    for (auto const& w : span.words) {
        auto h = fnv1a64(text::normalize_word(w));
        auto idx = static_cast<std::size_t>(h % dim);
        signed_counts[idx] += (h >> 63) ? -1.0 : 1.0;
        counts[idx] += 1.0;
    }
    double norm = 0.0;
    for (double v : signed_counts) norm += v * v;
    auto const& chosen = norm > 0.0 ? signed_counts : counts;
    if (norm == 0.0)
        for (double v : counts) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(chosen[i] / norm);
    return out;
}

inline Tensor mean_pool(std::vector<std::vector<float>> const& embeddings) {
    if (embeddings.empty()) throw ArgumentError("need at least one span embedding");
    std::size_t dim = embeddings.front().size();
    std::vector<double> acc(dim, 0.0);
    for (auto const& e : embeddings) {
        if (e.size() != dim) throw ShapeError("span embeddings differ in dimension");
        for (std::size_t i = 0; i < dim; ++i) acc[i] += e[i];
    }
    Tensor out({1, dim});
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(embeddings.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

/// The full forward graph for one instance, plus the leaf ids to bind.
struct MaskerGraph {
    ad::Graph graph;
    ad::NodeId patches;        // [P, 3p^2]
    ad::NodeId pooled_spans;   // [1, S]
    std::map<std::string, ad::NodeId> constants;
    std::vector<ad::NodeId> params; // aligned with MaskerModel::params
    ad::NodeId condition;
    std::vector<ad::NodeId> skips;  // encoder block outputs X_1..X_B
    ad::NodeId summary;
    ad::NodeId logits;              // [P, p^2]
};

namespace detail {

struct ConstantSpec {
    std::string name;
    Dims dims;
    float value;
};

inline std::vector<ConstantSpec> constants_for(MaskerConfig const& c) {
    std::size_t P = c.patches(), D = c.width();
    return {
        {"ones_width", {D}, 1.0f},
        {"ones_row", {1, D}, 1.0f},
        {"ones_head", {c.patch_pixels()}, 1.0f},
        {"mean_rows", {1, P}, 1.0f / static_cast<float>(P)},
        {"broadcast_rows", {P, 1}, 1.0f},
    };
}

/// (gamma, beta) = (1 + c Wg + bg, c Wb + bb) for decoder block `j`.
inline std::pair<ad::NodeId, ad::NodeId> film_params(ad::Graph& g, MaskerGraph const& mg, MaskerModel const& m,
                                                     ad::NodeId condition, int j) {
    auto p = "decoder.block" + std::to_string(j) + ".film.";
    auto leaf = [&](std::string const& name) { return mg.params[m.index_of(p + name)]; };
    auto ones_width = mg.constants.at("ones_width");
    auto delta = g.scale_shift(g.matmul(condition, leaf("gamma_weight")), ones_width, leaf("gamma_bias"));
    auto gamma = g.add(delta, mg.constants.at("ones_row"));
    auto beta = g.scale_shift(g.matmul(condition, leaf("beta_weight")), ones_width, leaf("beta_bias"));
    return {gamma, beta};
}

} // namespace detail

inline MaskerGraph build_graph(MaskerModel const& m) {
    auto const& c = m.config;
    MaskerGraph mg;
    auto& g = mg.graph;
    mg.patches = g.leaf("patches", false);
    mg.pooled_spans = g.leaf("pooled_spans", false);
    for (auto const& k : detail::constants_for(c)) mg.constants[k.name] = g.leaf(k.name, false);
    for (std::size_t i = 0; i < m.params.size(); ++i) mg.params.push_back(g.leaf(m.params[i].first, !m.frozen[i]));
    auto P = [&](std::string const& name) { return mg.params[m.index_of(name)]; };
    auto ones_width = mg.constants.at("ones_width");

    // frozen encoder
    auto x = g.add(g.matmul(mg.patches, P("encoder.patch")), P("encoder.position"));
    for (int b = 0; b < c.encoder_blocks; ++b) {
        x = g.add(x, g.relu(g.matmul(x, P("encoder.block" + std::to_string(b) + ".mix"))));
        mg.skips.push_back(x);
    }
    mg.summary = g.matmul(mg.constants.at("mean_rows"), x);

    // span condition
    mg.condition = g.scale_shift(g.matmul(mg.pooled_spans, P("projection.weight")), ones_width, P("projection.bias"));

    // decoder
    auto h = g.matmul(mg.constants.at("broadcast_rows"), mg.summary);
    for (int j = 0; j < c.decoder_blocks; ++j) {
        auto prefix = "decoder.block" + std::to_string(j);
        auto skip = mg.skips[static_cast<std::size_t>(c.encoder_blocks - 1 - j)];
        auto mixed = g.scale_shift(g.matmul(g.concat(h, skip), P(prefix + ".mix")), ones_width, P(prefix + ".bias"));
        auto [gamma, beta] = detail::film_params(g, mg, m, mg.condition, j);
        h = g.relu(g.scale_shift(mixed, gamma, beta));
    }
    mg.logits = g.scale_shift(g.matmul(h, P("head.weight")), mg.constants.at("ones_head"), P("head.bias"));
    return mg;
}

/// Bindings for every parameter and constant leaf, converted to `T`.
template <class T>
ad::Bindings<T> bind_model(MaskerGraph const& mg, MaskerModel const& m) {
    ad::Bindings<T> b;
    for (auto const& k : detail::constants_for(m.config)) b.emplace(mg.constants.at(k.name), BasicTensor<T>(k.dims, T(k.value)));
    for (std::size_t i = 0; i < m.params.size(); ++i) b.emplace(mg.params[i], BasicTensor<T>::cast_from(m.params[i].second));
    return b;
}

// ---------------------------------------------------------------------------
// Layout helpers between images and the patch-token layout
// ---------------------------------------------------------------------------

/// [P, 3p^2] patch rows with values in [0,1]; within a patch, element
/// (py * p + px) * 3 + channel.
inline Tensor patchify(ImageRGB8 const& img, MaskerConfig const& c) {
    auto n = static_cast<std::size_t>(c.image_size);
    if (img.width() != n || img.height() != n)
        throw ArgumentError("masker expects a " + std::to_string(n) + "x" + std::to_string(n) + " image, got " +
                            std::to_string(img.width()) + "x" + std::to_string(img.height()));
    auto p = static_cast<std::size_t>(c.patch_size);
    std::size_t grid = c.grid();
    Tensor out({c.patches(), c.patch_values()});
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx)
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        out.at(gy * grid + gx, (py * p + px) * 3 + ch) =
                            static_cast<float>(img.channel(gx * p + px, gy * p + py, ch)) / 127.5f - 1.0f;
    return out;
}

/// Index into the flat [P, p^2] head output for image pixel (y, x).
inline std::size_t patch_index(MaskerConfig const& c, std::size_t y, std::size_t x) {
    auto p = static_cast<std::size_t>(c.patch_size);
    std::size_t tok = (y / p) * c.grid() + (x / p);
    return tok * c.patch_pixels() + (y % p) * p + (x % p);
}

inline Tensor mask_to_patch_layout(BinaryMask const& mask, MaskerConfig const& c) {
    auto n = static_cast<std::size_t>(c.image_size);
    if (mask.height() != n || mask.width() != n) throw ArgumentError("truth mask does not match masker image size");
    Tensor out({c.patches(), c.patch_pixels()});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) out[patch_index(c, y, x)] = mask.get(y, x) ? 1.0f : 0.0f;
    return out;
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Mean-pools span embeddings and applies the learnable projection.
inline std::vector<float> project_spans(std::vector<std::vector<float>> const& embeddings, MaskerModel const& m) {
    Tensor pooled = mean_pool(embeddings);
    if (pooled.size() != static_cast<std::size_t>(m.config.span_embed_dim))
        throw ShapeError("span embedding width " + std::to_string(pooled.size()) + " does not match span_embed_dim " +
                         std::to_string(m.config.span_embed_dim));
    ad::Graph g;
    auto in = g.leaf("pooled", false);
    auto w = g.leaf("projection.weight", false);
    auto ones = g.leaf("ones", false);
    auto b = g.leaf("projection.bias", false);
    auto out = g.scale_shift(g.matmul(in, w), ones, b);
    ad::Bindings<float> bind{{in, pooled},
                             {w, m.param("projection.weight")},
                             {ones, Tensor({m.config.width()}, 1.0f)},
                             {b, m.param("projection.bias")}};
    auto values = ad::forward(g, bind);
    return values[out].vector();
}

/// FiLM of decoder block `block_index`: gamma * activation + beta with
/// (gamma, beta) generated from `condition`. `activation` is [rows, width].
inline Tensor film(Tensor const& activation, std::vector<float> const& condition, int block_index, MaskerModel const& m) {
    auto const& c = m.config;
    if (block_index < 0 || block_index >= c.decoder_blocks) throw ArgumentError("FiLM block index out of range");
    if (activation.dims().back() != c.width())
        throw ShapeError("FiLM activation width " + std::to_string(activation.dims().back()) + " != embed_dim " +
                         std::to_string(c.width()));
    if (condition.size() != c.width())
        throw ShapeError("FiLM condition width " + std::to_string(condition.size()) + " != embed_dim " +
                         std::to_string(c.width()));

    MaskerGraph mg;
    auto& g = mg.graph;
    auto act = g.leaf("activation", false);
    auto cond = g.leaf("condition", false);
    ad::Bindings<float> bind{{act, activation}, {cond, Tensor({1, c.width()}, condition)}};
    for (auto const& k : detail::constants_for(c)) {
        mg.constants[k.name] = g.leaf(k.name, false);
        bind.emplace(mg.constants[k.name], Tensor(k.dims, k.value));
    }
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        mg.params.push_back(g.leaf(m.params[i].first, false));
        bind.emplace(mg.params.back(), m.params[i].second);
    }
    auto [gamma, beta] = detail::film_params(g, mg, m, cond, block_index);
    auto out = g.scale_shift(act, gamma, beta);
    return ad::forward(g, bind)[out];
}

struct Prediction {
    BinaryMask mask;
    Heatmap heatmap;
    Tensor logits; // [P, p^2]
};

/// Largest float below 1; heatmap values are capped here so that a threshold
/// of 1.0 never fires.
inline constexpr float max_heat = 1.0f - 1.0f / 16777216.0f;

inline Heatmap logits_to_heatmap(Tensor const& logits, MaskerConfig const& c) {
    auto n = static_cast<std::size_t>(c.image_size);
    Tensor map({n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            map.at(y, x) = std::min(ad::detail::sigmoid(logits[patch_index(c, y, x)]), max_heat);
    return Heatmap(std::move(map));
}

inline Prediction predict_embedded(MaskerModel const& m, MaskerGraph const& mg, ImageRGB8 const& image,
                                   std::vector<std::vector<float>> const& embeddings, float tau) {
    if (!(tau > 0.0f && tau <= 1.0f)) throw ArgumentError("threshold must lie in (0,1]");
    auto bind = bind_model<float>(mg, m);
    bind.emplace(mg.patches, patchify(image, m.config));
    bind.emplace(mg.pooled_spans, mean_pool(embeddings));
    auto values = ad::forward(mg.graph, bind);
    Prediction p;
    p.logits = values[mg.logits];
    p.heatmap = logits_to_heatmap(p.logits, m.config);
    p.mask = BinaryMask(p.heatmap.height(), p.heatmap.width());
    for (std::size_t i = 0; i < p.mask.size(); ++i) p.mask.set_index(i, p.heatmap.values()[i] >= tau);
    return p;
}

inline std::vector<std::vector<float>> embed_spans(std::vector<text::HateSpan> const& spans, MaskerConfig const& c) {
    if (spans.empty()) throw ArgumentError("prediction needs at least one hate span");
    std::vector<std::vector<float>> out;
    for (auto const& s : spans) out.push_back(embed_span(s, static_cast<std::size_t>(c.span_embed_dim)));
    return out;
}

inline Prediction predict(MaskerModel const& m, ImageRGB8 const& image, std::vector<text::HateSpan> const& spans,
                          float tau = default_tau) {
    auto mg = build_graph(m);
    return predict_embedded(m, mg, image, embed_spans(spans, m.config), tau);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class LossKind { bce, soft_iou };

template <class T>
struct LossResult {
    double loss = 0.0;
    BasicTensor<T> grad; // d loss / d logits
};

/// Loss of a logit map against 0/1 targets (same layout), with its gradient.
/// bce: mean binary cross-entropy of sigmoid(logits).
/// soft_iou: 1 - sum(p t) / sum(p + t - p t).
template <class T>
LossResult<T> logits_loss(BasicTensor<T> const& logits, BasicTensor<T> const& target, LossKind kind) {
    if (logits.dims() != target.dims()) throw ShapeError("loss target shape does not match logits");
    std::size_t const n = logits.size();
    LossResult<T> r{0.0, BasicTensor<T>(logits.dims())};
    if (kind == LossKind::bce) {
        for (std::size_t i = 0; i < n; ++i) {
            double z = logits[i], t = target[i];
            r.loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
            double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            r.grad[i] = static_cast<T>((p - t) / static_cast<double>(n));
        }
        r.loss /= static_cast<double>(n);
    } else {
        std::vector<double> p(n);
        double inter = 0.0, uni = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = logits[i];
            p[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            inter += p[i] * target[i];
            uni += p[i] + target[i] - p[i] * target[i];
        }
        if (uni <= 0.0) return r;
        r.loss = 1.0 - inter / uni;
        for (std::size_t i = 0; i < n; ++i) {
            double t = target[i];
            double dp = -(t * uni - inter * (1.0 - t)) / (uni * uni);
            r.grad[i] = static_cast<T>(dp * p[i] * (1.0 - p[i]));
        }
    }
    return r;
}

struct TrainBatch {
    std::vector<ImageRGB8> images;
    std::vector<std::vector<std::vector<float>>> span_embeddings;
    std::vector<BinaryMask> truth_masks;

    void validate(MaskerConfig const& c) const {
        if (images.size() != span_embeddings.size() || images.size() != truth_masks.size())
            throw ArgumentError("train batch fields have different lengths");
        if (images.empty()) throw ArgumentError("train batch is empty");
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (!same_dims(images[i], truth_masks[i])) throw ArgumentError("truth mask dims differ from image dims");
            if (images[i].width() != static_cast<std::size_t>(c.image_size) ||
                images[i].height() != static_cast<std::size_t>(c.image_size))
                throw ArgumentError("batch image size does not match the masker config");
        }
    }
};

struct TrainLog {
    std::vector<double> loss; // batch loss at each step, before the update
};

struct StepResult {
    double loss = 0.0;
    std::vector<Tensor> grads; // per parameter; empty tensors for frozen ones
};

/// Mean loss over the batch and its gradient for every trainable parameter.
inline StepResult batch_gradient(MaskerModel const& m, MaskerGraph const& mg, TrainBatch const& batch, LossKind kind) {
    StepResult r;
    auto base = bind_model<float>(mg, m);
    std::vector<std::vector<double>> acc(m.params.size());
    for (std::size_t p = 0; p < m.params.size(); ++p)
        if (!m.frozen[p]) acc[p].assign(m.params[p].second.size(), 0.0);

    for (std::size_t i = 0; i < batch.images.size(); ++i) {
        auto bind = base;
        bind.insert_or_assign(mg.patches, patchify(batch.images[i], m.config));
        bind.insert_or_assign(mg.pooled_spans, mean_pool(batch.span_embeddings[i]));
        auto values = ad::forward(mg.graph, bind);
        auto target = mask_to_patch_layout(batch.truth_masks[i], m.config);
        auto loss = logits_loss(values[mg.logits], target, kind);
        r.loss += loss.loss;
        auto grads = ad::backward_from(mg.graph, values, {{mg.logits, std::move(loss.grad)}});
        for (std::size_t p = 0; p < m.params.size(); ++p) {
            if (m.frozen[p]) continue;
            auto const& gp = grads.at(mg.params[p]);
            for (std::size_t k = 0; k < gp.size(); ++k) acc[p][k] += gp[k];
        }
    }
    auto n = static_cast<double>(batch.images.size());
    r.loss /= n;
    for (std::size_t p = 0; p < m.params.size(); ++p) {
        if (m.frozen[p]) {
            r.grads.emplace_back();
            continue;
        }
        Tensor g(m.params[p].second.dims());
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = static_cast<float>(acc[p][k] / n);
        r.grads.push_back(std::move(g));
    }
    return r;
}

/// Plain gradient descent; step k uses batches[k % batches.size()].
inline TrainLog train(MaskerModel& m, std::vector<TrainBatch> const& batches, int steps, float lr,
                      LossKind kind = LossKind::bce) {
    if (steps < 1) throw ArgumentError("steps must be >= 1");
    if (!(lr > 0.0f) || !std::isfinite(lr)) throw ArgumentError("learning rate must be positive");
    if (batches.empty()) throw ArgumentError("no training batches");
    for (auto const& b : batches) b.validate(m.config);

    auto mg = build_graph(m);
    TrainLog log;
    for (int step = 0; step < steps; ++step) {
        auto const& batch = batches[static_cast<std::size_t>(step) % batches.size()];
        StepResult r;
        try {
            r = batch_gradient(m, mg, batch, kind);
        } catch (NumericError const& e) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(r.loss))
            throw NumericError("non-finite loss at step " + std::to_string(step) + " (lr " + std::to_string(lr) +
                               ", previous loss " + (log.loss.empty() ? std::string("n/a") : std::to_string(log.loss.back())) + ")");
        log.loss.push_back(r.loss);
        for (std::size_t p = 0; p < m.params.size(); ++p) {
            if (m.frozen[p]) continue;
            auto& w = m.params[p].second;
            for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * r.grads[p][k];
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/config.json plus one DHT1 file per parameter.
// ---------------------------------------------------------------------------

inline void save_model(MaskerModel const& m, std::filesystem::path const& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream cfg(dir / "config.json");
    if (!cfg) throw IoError("cannot write checkpoint config", (dir / "config.json").string());
    cfg << to_json(m.config).dump(2) << "\n";
    for (auto const& [name, t] : m.params) tensor_write(t, dir / (name + ".dht"));
}

inline MaskerModel load_model(std::filesystem::path const& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) throw IoError("cannot open checkpoint config", (dir / "config.json").string());
    MaskerConfig config;
    try {
        config = config_from_json(nlohmann::json::parse(in));
    } catch (nlohmann::json::exception const& e) {
        throw FormatError(std::string("bad checkpoint config: ") + e.what());
    }
    MaskerModel m;
    m.config = config;
    for (auto const& spec : parameter_layout(config)) {
        Tensor t = tensor_read(dir / (spec.name + ".dht"));
        if (t.dims() != spec.dims)
            throw FormatError("checkpoint tensor " + spec.name + " has dims " + dims_to_string(t.dims()) + ", expected " +
                              dims_to_string(spec.dims));
        m.params.emplace_back(spec.name, std::move(t));
        m.frozen.push_back(spec.frozen);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic overfit fixture: two coloured rectangles per image on a noisy
// grey background; the span names the colour of the hateful one.
// ---------------------------------------------------------------------------

namespace synthetic {

struct Colour {
    char const* name;
    Rgb rgb;
};

inline constexpr std::array<Colour, 4> palette{{
    {"red", {220, 40, 40}},
    {"green", {40, 200, 60}},
    {"blue", {50, 70, 220}},
    {"yellow", {230, 210, 40}},
}};

struct Instance {
    std::string id;
    ImageRGB8 image;
    BinaryMask truth;
    std::vector<text::HateSpan> spans;
};

/// Rectangles are aligned to `grid_step` pixels.
inline std::vector<Instance> make_instances(std::size_t count, int image_size, std::uint32_t seed, int grid_step = 4) {
    std::mt19937 rng(seed);
    auto uniform = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint32_t>(hi - lo + 1)); };
    int cells = image_size / grid_step;
    std::vector<Instance> out;
    for (std::size_t n = 0; n < count; ++n) {
        Instance inst;
        char id[32];
        std::snprintf(id, sizeof id, "syn%03zu", n);
        inst.id = id;
        auto size = static_cast<std::size_t>(image_size);
        inst.image = ImageRGB8(size, size);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                auto v = static_cast<std::uint8_t>(uniform(100, 150));
                inst.image.set(x, y, {v, v, v});
            }
        inst.truth = BinaryMask(size, size);

        int first = uniform(0, 3);
        int second = (first + uniform(1, 3)) % 4;
        int target = uniform(0, 1);
        // Two rectangles in the left and right halves (in a random order),
        // so they never overlap.
        bool swap = uniform(0, 1) == 1;
        for (int r = 0; r < 2; ++r) {
            int half = cells / 2;
            int x_lo = (r == 0) != swap ? 0 : half;
            int w = uniform(std::max(1, half / 3), half);
            int h = uniform(std::max(1, cells / 4), cells - 1);
            int x0 = x_lo + uniform(0, half - w);
            int y0 = uniform(0, cells - h);
            auto const& colour = palette[static_cast<std::size_t>(r == 0 ? first : second)];
            for (int y = y0 * grid_step; y < (y0 + h) * grid_step; ++y)
                for (int x = x0 * grid_step; x < (x0 + w) * grid_step; ++x) {
                    inst.image.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), colour.rgb);
                    if (r == target) inst.truth.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                }
        }
        auto const& name = palette[static_cast<std::size_t>(target == 0 ? first : second)].name;
        inst.spans.push_back(text::HateSpan{0, 1, {name}});
        out.push_back(std::move(inst));
    }
    return out;
}

inline TrainBatch to_batch(std::vector<Instance> const& instances, MaskerConfig const& c) {
    TrainBatch b;
    for (auto const& inst : instances) {
        b.images.push_back(inst.image);
        b.span_embeddings.push_back(embed_spans(inst.spans, c));
        b.truth_masks.push_back(inst.truth);
    }
    return b;
}

} // namespace synthetic

} // namespace dehate::masker
