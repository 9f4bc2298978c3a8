#pragma once

// Minimal reverse-mode differentiation over tensors. A Var is a handle to a
// graph node; ops build new nodes that keep their parents alive. backward()
// topologically sorts the graph reachable from a scalar root and runs each
// node's local rule once.

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssah/tensor.hpp"

namespace ssah::ag {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size()) grad = Tensor<T>::zeros_like(value);
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    [[nodiscard]] const Tensor<T>& grad() const { return node_->grad_buffer(); }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.fill(T(0));
    }
    [[nodiscard]] const std::vector<int>& shape() const { return node_->value.shape(); }
    [[nodiscard]] int dim(int i) const { return node_->value.dim(i); }
    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Builds an op node. `rule` is only attached when some parent needs gradients.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> rule) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    for (auto& p : parents) {
        if (p.requires_grad()) node->requires_grad = true;
        node->parents.push_back(p.node());
    }
    if (node->requires_grad) node->backward = std::move(rule);
    else node->parents.clear();
    return Var<T>(std::move(node));
}

template <typename T>
inline bool needs(const Node<T>& self, std::size_t i) {
    return self.parents[i] && self.parents[i]->requires_grad;
}

// Seeds d(root)/d(root) = 1 (or `seed` if given) and accumulates gradients
// into every reachable node that requires them.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
    if (!root.requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    auto& g = root.node()->grad_buffer();
    if (seed) {
        g.require_same_shape(*seed, "backward seed");
        g += *seed;
    } else {
        for (auto& v : g.vec()) v += T(1);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& n = **it;
        if (n.backward) n.backward(n);
    }
}

template <typename T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> detach(const Var<T>& x) {
    return Var<T>(x.value(), false);
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "add");
    Tensor<T> out = a.value();
    out += b.value();
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t i = 0; i < 2; ++i)
            if (needs(self, i)) self.parents[i]->grad_buffer() += self.grad;
    });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = std::tanh(v);
    return make_op<T>(out, {x}, [](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T y = self.value[i];
            gx[i] += self.grad[i] * (T(1) - y * y);
        }
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = v > T(0) ? v : slope * v;
    return make_op<T>(std::move(out), {x}, [slope](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (xv[i] > T(0) ? T(1) : slope);
    });
}

// Sum of all elements, returned as a [1] tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().vec()) s += v;
    return make_op<T>(Tensor<T>({1}, s), {x}, [](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const T g = self.grad[0];
        for (auto& v : gx.vec()) v += g;
    });
}

// Weighted sum of all elements: sum_i w_i x_i. Used to build scalar probes.
template <typename T>
Var<T> dot_const(const Var<T>& x, const Tensor<T>& w) {
    x.value().require_same_shape(w, "dot_const");
    T s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
    return make_op<T>(Tensor<T>({1}, s), {x}, [w](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
    });
}

// ---- batch-axis plumbing ------------------------------------------------------

// [N, ...] -> [reps * N, ...], block r holding a copy of the whole batch.
template <typename T>
Var<T> tile_batch(const Var<T>& x, int reps) {
    const auto& v = x.value();
    auto shape = v.shape();
    shape[0] *= reps;
    Tensor<T> out(shape);
    for (int r = 0; r < reps; ++r) std::copy(v.vec().begin(), v.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(r * v.size()));
    return make_op<T>(std::move(out), {x}, [reps](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const std::size_t block = gx.size();
        for (int r = 0; r < reps; ++r)
            for (std::size_t i = 0; i < block; ++i) gx[i] += self.grad[r * block + i];
    });
}

// Rows [begin, end) along the leading axis.
template <typename T>
Var<T> slice_batch(const Var<T>& x, int begin, int end) {
    const auto& v = x.value();
    if (begin < 0 || end > v.dim(0) || begin > end) throw DimensionError("slice_batch out of range");
    auto shape = v.shape();
    shape[0] = end - begin;
    const std::size_t stride = v.stride0();
    std::vector<T> data(v.vec().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                        v.vec().begin() + static_cast<std::ptrdiff_t>(end * stride));
    return make_op<T>(Tensor<T>(shape, std::move(data)), {x}, [begin, stride](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * stride + i] += self.grad[i];
    });
}

// Channel `ch` of an NCHW batch as an [N,1,H,W] tensor.
template <typename T>
Var<T> channel(const Var<T>& x, int ch) {
    const auto& v = x.value();
    if (v.rank() != 4 || ch < 0 || ch >= v.dim(1)) throw DimensionError("channel: bad index");
    const int n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
    Tensor<T> out({n, 1, v.dim(2), v.dim(3)});
    for (int b = 0; b < n; ++b)
        std::copy_n(v.data() + (static_cast<std::size_t>(b) * c + ch) * hw, hw, out.data() + static_cast<std::size_t>(b) * hw);
    return make_op<T>(std::move(out), {x}, [n, c, hw, ch](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < hw; ++i) gx[(static_cast<std::size_t>(b) * c + ch) * hw + i] += self.grad[static_cast<std::size_t>(b) * hw + i];
    });
}

// A scalar computed outside the graph from the values of `inputs`, with its
// gradient with respect to each input supplied by the caller.
template <typename T>
Var<T> external_scalar(T value, std::vector<Var<T>> inputs, std::vector<Tensor<T>> grads) {
    if (inputs.size() != grads.size()) throw DimensionError("external_scalar: one gradient per input");
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].value().require_same_shape(grads[i], "external_scalar");
    return make_op<T>(Tensor<T>({1}, value), inputs, [grads = std::move(grads)](Node<T>& self) {
        const T g = self.grad[0];
        for (std::size_t i = 0; i < grads.size(); ++i) {
            if (!needs(self, i)) continue;
            auto& gi = self.parents[i]->grad_buffer();
            for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g * grads[i][j];
        }
    });
}

}  // namespace ssah::ag
