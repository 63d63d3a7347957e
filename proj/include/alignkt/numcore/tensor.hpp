#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "alignkt/numcore/array.hpp"

namespace alignkt::nc {

namespace detail {

struct Node {
    Array value;
    std::vector<double> grad;  // empty until a backward pass reaches this node
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    std::uint64_t order = 0;
    bool requires_grad = false;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    bool is_leaf() const { return parents.empty(); }
};

inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

inline std::uint64_t next_order() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

// While alive, newly built ops record no parents and need no gradient.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Handle to a node of a dynamically recorded computation graph. Copies share
// the node. Leaves created with requires_grad accumulate gradients across
// backward passes until zero_grad().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Array value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
        if (!value.all_finite()) throw NumericError("Tensor: non-finite leaf value");
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
        node_->order = detail::next_order();
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Array& value() const { return node_->value; }
    Array& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    std::size_t size() const { return node_->value.size(); }
    double item() const { return node_->value[0]; }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const { return node_->grad; }
    Array grad_array() const {
        if (!has_grad()) return Array(shape());
        return Array(shape(), node_->grad);
    }
    void zero_grad() { node_->grad.clear(); }

    // Reverse-mode sweep from this (scalar) node. Non-leaf gradients are reset
    // first, so repeated calls only accumulate into leaves.
    void backward() const;

    // Names of every op reachable from this node, one entry per node.
    std::vector<std::string> trace_ops() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    // Builds a result node; backward receives the finished node.
    static Tensor make(Array value, const char* op, std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward) {
        if (!value.all_finite()) throw NumericError(std::string("non-finite output from op '") + op + "'");
        Tensor out;
        out.node_ = std::make_shared<detail::Node>();
        auto& n = *out.node_;
        n.value = std::move(value);
        n.op = op;
        n.order = detail::next_order();
        if (detail::grad_enabled()) {
            for (auto& in : inputs) {
                if (in.requires_grad()) n.requires_grad = true;
                n.parents.push_back(in.node_);
            }
        }
        if (n.requires_grad) n.backward = std::move(backward);
        return out;
    }

private:
    static std::vector<detail::Node*> reachable(detail::Node* root, bool only_grad) {
        std::vector<detail::Node*> nodes;
        std::unordered_set<detail::Node*> seen;
        std::vector<detail::Node*> stack{root};
        while (!stack.empty()) {
            auto* n = stack.back();
            stack.pop_back();
            if (!seen.insert(n).second) continue;
            if (only_grad && !n->requires_grad) continue;
            nodes.push_back(n);
            for (auto& p : n->parents) stack.push_back(p.get());
        }
        return nodes;
    }

    std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
    if (size() != 1) throw std::invalid_argument("backward: root must be a scalar, got " + shape_str(shape()));
    if (!requires_grad()) return;
    auto nodes = reachable(node_.get(), true);
    // Creation order is a topological order.
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->order > b->order; });
    for (auto* n : nodes) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto* n : nodes) {
        if (n->is_leaf() || !n->backward) continue;
        n->backward(*n);
    }
}

inline std::vector<std::string> Tensor::trace_ops() const {
    std::vector<std::string> ops;
    for (auto* n : reachable(node_.get(), false)) ops.emplace_back(n->op);
    return ops;
}

}  // namespace alignkt::nc
