#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "cfci/core/tensor.hpp"

namespace cfci {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. `backward_fn` reads `grad` and
/// accumulates into the parents' grads.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

/// RAII switch that disables tape recording (inference / stat updates).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

inline void accumulate_grad(Node& n, const Tensor& g) {
    if (!n.grad.defined()) {
        n.grad = g.clone();
        return;
    }
    double* dst = n.grad.data();
    const double* src = g.data();
    const std::int64_t n_el = g.numel();
    for (std::int64_t i = 0; i < n_el; ++i) dst[i] += src[i];
}

/// Handle to a tape node. Copying shares the node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad && grad_mode();
        return Var(std::move(n));
    }

    static Var param(Tensor value) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& value_mut() { return n_->value; }
    const Tensor& grad() const { return n_->grad; }
    Tensor& grad_mut() { return n_->grad; }
    bool has_grad() const { return n_->grad.defined(); }
    bool requires_grad() const { return n_->requires_grad; }
    const Shape& shape() const { return n_->value.shape(); }
    std::int64_t numel() const { return n_->value.numel(); }
    NodePtr node() const { return n_; }

    void zero_grad() { n_->grad = Tensor(); }

    Var detach() const { return leaf(n_->value, false); }

private:
    NodePtr n_;
};

/// Builds an op node. Skips tape wiring when grads are off or no parent
/// needs them, so intermediates free as soon as they go out of scope.
inline Var make_op(Tensor out, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    bool need = grad_mode();
    if (need) {
        need = false;
        for (const auto& p : parents)
            if (p.requires_grad()) { need = true; break; }
    }
    auto n = std::make_shared<Node>();
    n->value = std::move(out);
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(n));
}

/// Reverse accumulation from a scalar root. Frees each node's closure after
/// use so captured activations release progressively.
inline void backward(const Var& root) {
    if (root.numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!root.requires_grad()) return;

    // iterative post-order topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad = Tensor(Shape(root.shape()), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            if (!n->grad.defined()) n->grad = Tensor(n->value.shape());
            n->backward_fn(*n);
            n->backward_fn = nullptr;
        }
    }
}

} // namespace cfci
