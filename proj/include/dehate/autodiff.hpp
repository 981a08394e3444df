#pragma once

// Small reverse-mode automatic differentiation engine over dense tensors.
// The op set is closed: add, multiply, matmul, sigmoid, relu, mean,
// scale_shift (per-channel broadcast affine) and concat (last axis).
// Evaluation is single-threaded and accumulates in index order, so equal
// inputs give bit-identical values and gradients.

#include "error.hpp"
#include "tensor.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dehate::ad {

enum class OpKind : std::uint8_t { leaf, add, multiply, matmul, sigmoid, relu, mean, scale_shift, concat };

inline std::string_view to_string(OpKind k) {
    switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::multiply: return "multiply";
    case OpKind::matmul: return "matmul";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::mean: return "mean";
    case OpKind::scale_shift: return "scale_shift";
    case OpKind::concat: return "concat";
    }
    return "?";
}

using NodeId = std::size_t;

struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    std::string label;
    bool requires_grad = false;
};

/// Append-only DAG. Nodes may only reference earlier nodes, which makes the
/// insertion order a valid topological order.
class Graph {
  public:
    /// Input or parameter slot. Constant slots never receive gradients.
    NodeId leaf(std::string label, bool requires_grad = true) {
        return push(OpKind::leaf, {}, std::move(label), requires_grad);
    }

    NodeId add(NodeId a, NodeId b) { return push(OpKind::add, {a, b}); }
    NodeId multiply(NodeId a, NodeId b) { return push(OpKind::multiply, {a, b}); }
    NodeId matmul(NodeId a, NodeId b) { return push(OpKind::matmul, {a, b}); }
    NodeId sigmoid(NodeId x) { return push(OpKind::sigmoid, {x}); }
    NodeId relu(NodeId x) { return push(OpKind::relu, {x}); }
    NodeId mean(NodeId x) { return push(OpKind::mean, {x}); }
    /// x * gamma + beta, with gamma/beta broadcast along the last axis of x.
    NodeId scale_shift(NodeId x, NodeId gamma, NodeId beta) {
        return push(OpKind::scale_shift, {x, gamma, beta});
    }
    NodeId concat(NodeId a, NodeId b) { return push(OpKind::concat, {a, b}); }

    Node const& node(NodeId id) const { return nodes_.at(id); }
    std::vector<Node> const& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    std::vector<NodeId> leaves() const {
        std::vector<NodeId> out;
        for (NodeId i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].kind == OpKind::leaf) out.push_back(i);
        return out;
    }

    /// Human-readable node name for diagnostics.
    std::string describe(NodeId id) const {
        auto const& n = nodes_.at(id);
        std::string s = "node " + std::to_string(id) + " (" + std::string(to_string(n.kind));
        if (!n.label.empty()) s += " '" + n.label + "'";
        return s + ")";
    }

  private:
    NodeId push(OpKind kind, std::vector<NodeId> inputs, std::string label = {}, bool requires_grad = false) {
        NodeId id = nodes_.size();
        for (auto in : inputs) {
            if (in >= id) throw ArgumentError("graph node " + std::to_string(id) + " references later node " + std::to_string(in));
            requires_grad = requires_grad || nodes_[in].requires_grad;
        }
        nodes_.push_back(Node{kind, std::move(inputs), std::move(label), requires_grad});
        return id;
    }

    std::vector<Node> nodes_;
};

template <class T>
using Bindings = std::map<NodeId, BasicTensor<T>>;

/// Value of every node, indexed by node id.
template <class T>
using Values = std::vector<BasicTensor<T>>;

namespace detail {

struct MatShape {
    std::size_t m, k, n;
    Dims out;
};

inline MatShape matmul_shape(Dims const& a, Dims const& b) {
    if (a.size() > 2 || b.size() > 2) throw ShapeError("matmul operands must have rank 1 or 2");
    std::size_t m = a.size() == 2 ? a[0] : 1;
    std::size_t ka = a.back();
    std::size_t kb = b[0];
    std::size_t n = b.size() == 2 ? b[1] : 1;
    if (ka != kb) throw ShapeError("matmul inner dims differ: " + dims_to_string(a) + " x " + dims_to_string(b));
    Dims out;
    if (b.size() == 1) out = {m};
    else if (a.size() == 1) out = {n};
    else out = {m, n};
    return {m, ka, n, out};
}

template <class T>
T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
BasicTensor<T> eval_node(Graph const& g, NodeId id, Values<T> const& v) {
    auto const& node = g.node(id);
    auto in = [&](std::size_t i) -> BasicTensor<T> const& { return v[node.inputs[i]]; };
    auto same_dims = [&](BasicTensor<T> const& a, BasicTensor<T> const& b) {
        if (a.dims() != b.dims())
            throw ShapeError("shape mismatch at " + g.describe(id) + ": " + dims_to_string(a.dims()) + " vs " +
                             dims_to_string(b.dims()));
    };

    switch (node.kind) {
    case OpKind::leaf:
        throw ArgumentError("unbound " + g.describe(id));
    case OpKind::add:
    case OpKind::multiply: {
        auto const& a = in(0);
        auto const& b = in(1);
        same_dims(a, b);
        BasicTensor<T> out(a.dims());
        for (std::size_t i = 0; i < a.size(); ++i)
            out[i] = node.kind == OpKind::add ? a[i] + b[i] : a[i] * b[i];
        return out;
    }
    case OpKind::matmul: {
        auto const& a = in(0);
        auto const& b = in(1);
        MatShape s;
        try {
            s = matmul_shape(a.dims(), b.dims());
        } catch (ShapeError const& e) {
            throw ShapeError(std::string(e.what()) + " at " + g.describe(id));
        }
        BasicTensor<T> out(s.out);
        auto pa = a.data();
        auto pb = b.data();
        auto po = out.data();
        for (std::size_t i = 0; i < s.m; ++i)
            for (std::size_t k = 0; k < s.k; ++k) {
                T aik = pa[i * s.k + k];
                for (std::size_t j = 0; j < s.n; ++j) po[i * s.n + j] += aik * pb[k * s.n + j];
            }
        return out;
    }
    case OpKind::sigmoid:
    case OpKind::relu: {
        auto const& x = in(0);
        BasicTensor<T> out(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = node.kind == OpKind::sigmoid ? sigmoid(x[i]) : (x[i] > T(0) ? x[i] : T(0));
        return out;
    }
    case OpKind::mean: {
        auto const& x = in(0);
        T sum = 0;
        for (T e : x.data()) sum += e;
        return BasicTensor<T>({1}, std::vector<T>{sum / static_cast<T>(x.size())});
    }
    case OpKind::scale_shift: {
        auto const& x = in(0);
        auto const& gamma = in(1);
        auto const& beta = in(2);
        std::size_t c = x.dims().back();
        if (gamma.size() != c || beta.size() != c)
            throw ShapeError("scale_shift channel mismatch at " + g.describe(id) + ": x " + dims_to_string(x.dims()) +
                             ", gamma " + dims_to_string(gamma.dims()) + ", beta " + dims_to_string(beta.dims()));
        BasicTensor<T> out(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * gamma[i % c] + beta[i % c];
        return out;
    }
    case OpKind::concat: {
        auto const& a = in(0);
        auto const& b = in(1);
        if (a.rank() != b.rank() || !std::equal(a.dims().begin(), a.dims().end() - 1, b.dims().begin()))
            throw ShapeError("concat shape mismatch at " + g.describe(id) + ": " + dims_to_string(a.dims()) + " vs " +
                             dims_to_string(b.dims()));
        std::size_t ca = a.dims().back(), cb = b.dims().back();
        std::size_t rows = a.size() / ca;
        Dims dims = a.dims();
        dims.back() = ca + cb;
        BasicTensor<T> out(dims);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(a.data().begin() + r * ca, ca, out.data().begin() + r * (ca + cb));
            std::copy_n(b.data().begin() + r * cb, cb, out.data().begin() + r * (ca + cb) + ca);
        }
        return out;
    }
    }
    throw ArgumentError("unknown op kind at " + g.describe(id));
}

template <class T>
void accumulate(std::optional<BasicTensor<T>>& slot, BasicTensor<T> grad) {
    if (!slot) {
        slot = std::move(grad);
        return;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) (*slot)[i] += grad[i];
}

} // namespace detail

/// Evaluates every node. All leaves reachable by the graph must be bound.
template <class T>
Values<T> forward(Graph const& g, Bindings<T> const& inputs) {
    Values<T> values;
    values.reserve(g.size());
    for (NodeId id = 0; id < g.size(); ++id) {
        if (g.node(id).kind == OpKind::leaf) {
            auto it = inputs.find(id);
            if (it == inputs.end()) throw ArgumentError("unbound " + g.describe(id));
            values.push_back(it->second);
        } else {
            values.push_back(detail::eval_node(g, id, values));
        }
        if (!values.back().all_finite()) throw NumericError("non-finite value produced by " + g.describe(id));
    }
    return values;
}

/// Propagates the given output gradients (`seeds`, each shaped like its node)
/// back to every leaf that requires a gradient. Leaves that do not influence
/// any seed receive zeros.
template <class T>
std::map<NodeId, BasicTensor<T>> backward_from(Graph const& g, Values<T> const& values,
                                               std::map<NodeId, BasicTensor<T>> const& seeds) {
    if (values.size() != g.size()) throw ArgumentError("backward needs the value of every node");
    std::vector<std::optional<BasicTensor<T>>> grads(g.size());
    for (auto const& [id, seed] : seeds) {
        if (id >= g.size()) throw ArgumentError("seed refers to unknown node " + std::to_string(id));
        if (seed.dims() != values[id].dims())
            throw ShapeError("seed shape " + dims_to_string(seed.dims()) + " does not match " + g.describe(id));
        detail::accumulate(grads[id], seed);
    }

    for (NodeId id = g.size(); id-- > 0;) {
        auto const& node = g.node(id);
        if (node.kind == OpKind::leaf || !grads[id] || !node.requires_grad) continue;
        auto const& gout = *grads[id];
        auto const& out = values[id];
        auto wants = [&](std::size_t i) { return g.node(node.inputs[i]).requires_grad; };
        auto val = [&](std::size_t i) -> BasicTensor<T> const& { return values[node.inputs[i]]; };
        auto push = [&](std::size_t i, BasicTensor<T> grad) { detail::accumulate(grads[node.inputs[i]], std::move(grad)); };

        switch (node.kind) {
        case OpKind::leaf: break;
        case OpKind::add:
            if (wants(0)) push(0, gout);
            if (wants(1)) push(1, gout);
            break;
        case OpKind::multiply:
            for (std::size_t side = 0; side < 2; ++side) {
                if (!wants(side)) continue;
                auto const& other = val(1 - side);
                BasicTensor<T> gr(gout.dims());
                for (std::size_t i = 0; i < gr.size(); ++i) gr[i] = gout[i] * other[i];
                push(side, std::move(gr));
            }
            break;
        case OpKind::matmul: {
            auto const& a = val(0);
            auto const& b = val(1);
            auto s = detail::matmul_shape(a.dims(), b.dims());
            auto pg = gout.data();
            if (wants(0)) {
                // dA[i,k] = sum_j g[i,j] * B[k,j]
                BasicTensor<T> ga(a.dims());
                auto pb = b.data();
                for (std::size_t i = 0; i < s.m; ++i)
                    for (std::size_t k = 0; k < s.k; ++k) {
                        T acc = 0;
                        for (std::size_t j = 0; j < s.n; ++j) acc += pg[i * s.n + j] * pb[k * s.n + j];
                        ga[i * s.k + k] = acc;
                    }
                push(0, std::move(ga));
            }
            if (wants(1)) {
                // dB[k,j] = sum_i A[i,k] * g[i,j]
                BasicTensor<T> gb(b.dims());
                auto pa = a.data();
                for (std::size_t i = 0; i < s.m; ++i)
                    for (std::size_t k = 0; k < s.k; ++k) {
                        T aik = pa[i * s.k + k];
                        for (std::size_t j = 0; j < s.n; ++j) gb[k * s.n + j] += aik * pg[i * s.n + j];
                    }
                push(1, std::move(gb));
            }
            break;
        }
        case OpKind::sigmoid: {
            BasicTensor<T> gr(gout.dims());
            for (std::size_t i = 0; i < gr.size(); ++i) gr[i] = gout[i] * out[i] * (T(1) - out[i]);
            push(0, std::move(gr));
            break;
        }
        case OpKind::relu: {
            auto const& x = val(0);
            BasicTensor<T> gr(gout.dims());
            for (std::size_t i = 0; i < gr.size(); ++i) gr[i] = x[i] > T(0) ? gout[i] : T(0);
            push(0, std::move(gr));
            break;
        }
        case OpKind::mean: {
            auto const& x = val(0);
            push(0, BasicTensor<T>(x.dims(), gout[0] / static_cast<T>(x.size())));
            break;
        }
        case OpKind::scale_shift: {
            auto const& x = val(0);
            auto const& gamma = val(1);
            std::size_t c = x.dims().back();
            if (wants(0)) {
                BasicTensor<T> gx(x.dims());
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gout[i] * gamma[i % c];
                push(0, std::move(gx));
            }
            if (wants(1)) {
                BasicTensor<T> gg(gamma.dims());
                for (std::size_t i = 0; i < x.size(); ++i) gg[i % c] += gout[i] * x[i];
                push(1, std::move(gg));
            }
            if (wants(2)) {
                BasicTensor<T> gb(val(2).dims());
                for (std::size_t i = 0; i < x.size(); ++i) gb[i % c] += gout[i];
                push(2, std::move(gb));
            }
            break;
        }
        case OpKind::concat: {
            auto const& a = val(0);
            auto const& b = val(1);
            std::size_t ca = a.dims().back(), cb = b.dims().back();
            std::size_t rows = a.size() / ca;
            if (wants(0)) {
                BasicTensor<T> ga(a.dims());
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(gout.data().begin() + r * (ca + cb), ca, ga.data().begin() + r * ca);
                push(0, std::move(ga));
            }
            if (wants(1)) {
                BasicTensor<T> gb(b.dims());
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(gout.data().begin() + r * (ca + cb) + ca, cb, gb.data().begin() + r * cb);
                push(1, std::move(gb));
            }
            break;
        }
        }
    }

    std::map<NodeId, BasicTensor<T>> result;
    for (NodeId id = 0; id < g.size(); ++id) {
        auto const& node = g.node(id);
        if (node.kind != OpKind::leaf || !node.requires_grad) continue;
        result.emplace(id, grads[id] ? std::move(*grads[id]) : BasicTensor<T>(values[id].dims()));
    }
    return result;
}

/// Gradient of a scalar loss node with respect to every gradient-carrying leaf.
template <class T>
std::map<NodeId, BasicTensor<T>> backward(Graph const& g, Bindings<T> const& inputs, NodeId loss_node) {
    auto values = forward(g, inputs);
    if (loss_node >= g.size()) throw ArgumentError("loss node out of range");
    if (values[loss_node].size() != 1)
        throw ArgumentError("loss " + g.describe(loss_node) + " is not scalar: " + dims_to_string(values[loss_node].dims()));
    std::map<NodeId, BasicTensor<T>> seeds;
    seeds.emplace(loss_node, BasicTensor<T>(values[loss_node].dims(), T(1)));
    return backward_from(g, values, seeds);
}

} // namespace dehate::ad
