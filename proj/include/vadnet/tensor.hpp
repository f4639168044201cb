#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vadnet/error.hpp"

namespace vadnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(const Node&)> backward;

    bool is_leaf() const { return inputs.empty(); }
};

}  // namespace detail

/// Dense row-major float64 array with an optional reverse-mode gradient.
///
/// A Tensor is a shared handle: copies alias the same storage. Values
/// produced by ops are never modified afterwards; only leaves (parameters)
/// are updated in place through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        for (std::size_t extent : shape) {
            if (extent == 0) {
                throw Error(ErrorKind::InvalidShape, "zero extent in shape " + shape_string(shape));
            }
        }
        if (shape_size(shape) != values.size()) {
            throw Error(ErrorKind::InvalidShape, "shape " + shape_string(shape) + " holds " +
                                                     std::to_string(shape_size(shape)) + " values, got " +
                                                     std::to_string(values.size()));
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> values(shape_size(shape), 0.0);
        return from(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> values(shape_size(shape), value);
        return from(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data.size(); }
    bool is_scalar() const { return size() == 1; }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf(); }
    std::string_view op() const { return node_->op; }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }

    double item() const {
        if (!is_scalar()) {
            throw Error(ErrorKind::InvalidShape, "item() on non-scalar " + shape_string(shape()));
        }
        return node_->data[0];
    }

    double at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    void clear_grad() { node_->grad.clear(); }

    void set_requires_grad(bool value) {
        if (!is_leaf()) throw Error(ErrorKind::InvalidShape, "requires_grad can only be set on leaves");
        node_->requires_grad = value;
    }

    /// Copy of the values as a fresh leaf with no history.
    Tensor detach(bool requires_grad = false) const {
        return from(node_->shape, node_->data, requires_grad);
    }

    Tensor clone() const { return detach(requires_grad()); }

    std::size_t offset(std::initializer_list<std::size_t> index) const {
        const Shape& s = node_->shape;
        if (index.size() != s.size()) {
            throw Error(ErrorKind::InvalidShape, "index rank " + std::to_string(index.size()) +
                                                     " for shape " + shape_string(s));
        }
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : index) {
            if (i >= s[axis]) {
                throw Error(ErrorKind::InvalidShape, "index " + std::to_string(i) + " out of range on axis " +
                                                         std::to_string(axis));
            }
            flat = flat * s[axis] + i;
            ++axis;
        }
        return flat;
    }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    /// Builds an op result. `backward` is recorded only when some input
    /// requires a gradient.
    static Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                              std::vector<Tensor> inputs, std::function<void(const detail::Node&)> backward) {
        Tensor out = from(std::move(shape), std::move(values));
        out.node_->op = op;
        bool needs_grad = false;
        for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();
        if (needs_grad) {
            out.node_->requires_grad = true;
            out.node_->backward = std::move(backward);
            out.node_->inputs.reserve(inputs.size());
            for (Tensor& in : inputs) out.node_->inputs.push_back(std::move(in.node_));
        }
        return out;
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;
};

/// Accumulation target for a backward function: the input's grad buffer, or
/// an empty span when that input does not take part in differentiation.
inline std::span<double> grad_sink(const detail::Node& node, std::size_t input) {
    detail::Node& in = *node.inputs[input];
    if (!in.requires_grad) return {};
    return in.grad;
}

/// Nodes reachable from a root in topological order (inputs before users).
class ComputeGraph {
public:
    explicit ComputeGraph(const Tensor& root) {
        if (!root.defined()) return;
        std::unordered_set<const detail::Node*> seen;
        // Iterative post-order DFS; graphs from deep presets overflow recursion.
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        stack.emplace_back(root.node().get(), 0);
        seen.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                detail::Node* child = node->inputs[next++].get();
                if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            } else {
                nodes_.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::span<detail::Node* const> nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<detail::Node*> nodes_;
};

struct BackwardOptions {
    bool accumulate = false;
    // Invoked once per node as it is processed; used by tests to verify traversal.
    std::function<void(const detail::Node&)> on_visit;
};

/// Populates grads of every requires_grad node reachable from `loss` with
/// d(loss)/d(node). Leaf grads are zeroed first unless `accumulate` is set.
inline void backward(const Tensor& loss, const BackwardOptions& options = {}) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw Error(ErrorKind::InvalidShape, "backward needs a scalar loss, got " +
                                                 (loss.defined() ? shape_string(loss.shape()) : std::string("none")));
    }
    if (!loss.requires_grad()) return;
    ComputeGraph graph(loss);
    for (detail::Node* node : graph.nodes()) {
        if (node->is_leaf() && options.accumulate && node->grad.size() == node->data.size()) continue;
        node->grad.assign(node->data.size(), 0.0);
    }
    loss.node()->grad[0] = 1.0;
    auto order = graph.nodes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const detail::Node& node = **it;
        if (options.on_visit) options.on_visit(node);
        if (node.backward) node.backward(node);
    }
}

inline bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace vadnet
