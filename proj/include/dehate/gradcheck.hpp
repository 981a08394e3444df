#pragma once

// Central finite-difference checks of the autodiff engine: random small
// graphs covering every op kind, and a miniature end-to-end masker. Both run
// in double precision so the difference quotient itself is accurate enough to
// resolve relative errors well below 1e-4.

#include "autodiff.hpp"
#include "masker.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace dehate::gradcheck {

inline constexpr double default_epsilon = 1e-3;
inline constexpr double default_tolerance = 1e-4;

/// |a - n| / max(|a|, |n|), or 0 when both are below 1e-10.
inline double relative_error(double analytic, double numeric) {
    double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < 1e-10) return 0.0;
    return std::abs(analytic - numeric) / scale;
}

struct GraphCase {
    ad::Graph graph;
    ad::Bindings<double> inputs;
    ad::NodeId loss = 0;
};

/// Random graph of 2..6 ops ending in a mean. `forced` (0..6) selects an op
/// kind that is guaranteed to appear: add, multiply, matmul, sigmoid, relu,
/// scale_shift, concat.
inline GraphCase random_graph(std::mt19937& rng, int forced) {
    auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<unsigned>(hi - lo + 1)); };
    auto value = [&] {
        // magnitude in [0.2, 1.2] with random sign keeps ReLU inputs off the kink
        double mag = 0.2 + static_cast<double>(rng() % 1000) / 1000.0;
        return (rng() & 1u) ? mag : -mag;
    };
    GraphCase gc;
    auto& g = gc.graph;
    auto leaf = [&](Dims dims) {
        auto id = g.leaf("x" + std::to_string(g.size()));
        BasicTensor<double> t(dims);
        for (auto& v : t.data()) v = value();
        gc.inputs.emplace(id, std::move(t));
        return id;
    };

    std::size_t rows = static_cast<std::size_t>(pick(1, 3)), cols = static_cast<std::size_t>(pick(1, 4));
    auto x = leaf({rows, cols});
    std::vector<std::pair<ad::NodeId, Dims>> history{{x, {rows, cols}}};
    int ops = pick(2, 6);
    int forced_at = pick(0, ops - 1);
    for (int k = 0; k < ops; ++k) {
        int kind = k == forced_at ? forced : pick(0, 6);
        Dims shape{rows, cols};
        switch (kind) {
        case 0: x = g.add(x, leaf(shape)); break;
        case 1: {
            // reuse an earlier same-shaped node when possible to exercise fan-out
            ad::NodeId other = 0;
            bool found = false;
            for (auto const& [id, d] : history)
                if (d == shape && id != x && (rng() & 1u)) {
                    other = id;
                    found = true;
                }
            x = g.multiply(x, found ? other : leaf(shape));
            break;
        }
        case 2: {
            auto out = static_cast<std::size_t>(pick(1, 4));
            x = g.matmul(x, leaf({cols, out}));
            cols = out;
            break;
        }
        case 3: x = g.sigmoid(x); break;
        case 4: x = g.relu(g.add(x, leaf(shape))); break;
        case 5: x = g.scale_shift(x, leaf({cols}), leaf({cols})); break;
        case 6: {
            auto extra = static_cast<std::size_t>(pick(1, 3));
            x = g.concat(x, leaf({rows, extra}));
            cols += extra;
            break;
        }
        }
        history.emplace_back(x, Dims{rows, cols});
    }
    gc.loss = g.mean(x);
    return gc;
}

/// Indices of ReLU inputs, for detecting kink crossings during differencing.
inline std::vector<ad::NodeId> relu_inputs(ad::Graph const& g) {
    std::vector<ad::NodeId> out;
    for (auto const& n : g.nodes())
        if (n.kind == ad::OpKind::relu) out.push_back(n.inputs[0]);
    return out;
}

inline bool same_relu_pattern(std::vector<ad::NodeId> const& relus, ad::Values<double> const& a, ad::Values<double> const& b) {
    for (auto id : relus)
        for (std::size_t i = 0; i < a[id].size(); ++i)
            if ((a[id][i] > 0) != (b[id][i] > 0)) return false;
    return true;
}

struct CheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t skipped = 0; // coordinates whose perturbation crossed a ReLU kink

    void merge(CheckResult const& o) {
        max_relative_error = std::max(max_relative_error, o.max_relative_error);
        coordinates += o.coordinates;
        skipped += o.skipped;
    }
};

/// Compares backward() of a scalar loss against central differences for every
/// gradient-carrying leaf element.
inline CheckResult check_graph(GraphCase const& gc, double eps = default_epsilon) {
    CheckResult r;
    auto grads = ad::backward(gc.graph, gc.inputs, gc.loss);
    auto relus = relu_inputs(gc.graph);
    for (auto const& [id, grad] : grads) {
        for (std::size_t i = 0; i < grad.size(); ++i) {
            auto plus = gc.inputs, minus = gc.inputs;
            plus.at(id)[i] += eps;
            minus.at(id)[i] -= eps;
            auto vp = ad::forward(gc.graph, plus);
            auto vm = ad::forward(gc.graph, minus);
            ++r.coordinates;
            if (!same_relu_pattern(relus, vp, vm)) {
                ++r.skipped;
                continue;
            }
            double numeric = (vp[gc.loss][0] - vm[gc.loss][0]) / (2 * eps);
            r.max_relative_error = std::max(r.max_relative_error, relative_error(grad[i], numeric));
        }
    }
    return r;
}

inline CheckResult check_random_graphs(std::size_t count, std::uint32_t seed, double eps = default_epsilon) {
    std::mt19937 rng(seed);
    CheckResult total;
    for (std::size_t k = 0; k < count; ++k) total.merge(check_graph(random_graph(rng, static_cast<int>(k % 7)), eps));
    return total;
}

inline masker::MaskerConfig miniature_config(std::uint32_t seed) {
    masker::MaskerConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 4;
    c.encoder_blocks = 2;
    c.decoder_blocks = 2;
    c.span_embed_dim = 4;
    c.seed = seed;
    return c;
}

/// Gradient of the BCE training loss of a miniature masker with respect to
/// every trainable parameter, checked against central differences.
inline CheckResult check_masker(std::uint32_t seed, double eps = default_epsilon,
                                masker::LossKind kind = masker::LossKind::bce) {
    auto model = masker::init(miniature_config(seed));
    auto const& c = model.config;
    std::mt19937 rng(seed ^ 0x5bd1e995u);
    auto n = static_cast<std::size_t>(c.image_size);
    ImageRGB8 image(n, n);
    BinaryMask truth(n, n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            image.set(x, y, {static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng())});
            truth.set(y, x, (rng() & 1u) != 0);
        }
    std::vector<text::HateSpan> spans{{0, 2, {"hateful", "words"}}, {3, 4, {"slur"}}};

    auto mg = masker::build_graph(model);
    auto bind = masker::bind_model<double>(mg, model);
    bind.emplace(mg.patches, BasicTensor<double>::cast_from(masker::patchify(image, c)));
    bind.emplace(mg.pooled_spans, BasicTensor<double>::cast_from(masker::mean_pool(masker::embed_spans(spans, c))));
    auto target = BasicTensor<double>::cast_from(masker::mask_to_patch_layout(truth, c));
    auto relus = relu_inputs(mg.graph);

    auto values = ad::forward(mg.graph, bind);
    auto loss = masker::logits_loss(values[mg.logits], target, kind);
    auto grads = ad::backward_from(mg.graph, values, {{mg.logits, loss.grad}});

    CheckResult r;
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        if (model.frozen[p]) continue;
        auto leaf = mg.params[p];
        auto const& grad = grads.at(leaf);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            auto plus = bind, minus = bind;
            plus.at(leaf)[i] += eps;
            minus.at(leaf)[i] -= eps;
            auto vp = ad::forward(mg.graph, plus);
            auto vm = ad::forward(mg.graph, minus);
            ++r.coordinates;
            if (!same_relu_pattern(relus, vp, vm)) {
                ++r.skipped;
                continue;
            }
            double lp = masker::logits_loss(vp[mg.logits], target, kind).loss;
            double lm = masker::logits_loss(vm[mg.logits], target, kind).loss;
            r.max_relative_error = std::max(r.max_relative_error, relative_error(grad[i], (lp - lm) / (2 * eps)));
        }
    }
    return r;
}

} // namespace dehate::gradcheck
