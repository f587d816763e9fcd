#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "isd/rng.hpp"

// Dense row-major tensors with reverse-mode autodiff. The graph is
// define-by-run: every op allocates a fresh node whose backward closure knows
// how to push its output gradient into its parents. Values are immutable once
// an op has produced them; only gradient buffers (and, between steps, leaf
// parameter data via data_mut) are ever written in place.

namespace isd {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

namespace detail {

// Counts how many times log/sqrt had to clamp a subnormal-or-zero input up to
// the 1e-12 floor. Queryable so production runs can detect silent clamping.
inline thread_local std::uint64_t clamp_events = 0;

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

inline void reset_clamp_events() { detail::clamp_events = 0; }
inline std::uint64_t clamp_events() { return detail::clamp_events; }

template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node<T>>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from(Shape{}, {v}, requires_grad);
    }

    static Tensor uniform(Shape shape, T lo, T hi, rng::Xoshiro256& g, bool requires_grad = false) {
        std::vector<T> data(shape_numel(shape));
        for (auto& x : data) x = static_cast<T>(g.uniform(double(lo), double(hi)));
        return from(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->value.size(); }
    std::size_t ndim() const { return n_->shape.size(); }
    bool requires_grad() const { return n_->requires_grad; }

    std::span<const T> value() const { return n_->value; }
    T operator[](std::size_t i) const { return n_->value[i]; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of " + std::to_string(numel()) + " elements");
        return n_->value[0];
    }

    // Leaf data mutation (optimizer updates, input staging). Never call on a
    // tensor that is still reachable from a live graph built over its old
    // values.
    std::span<T> data_mut() { return n_->value; }

    std::span<const T> grad() const {
        n_->ensure_grad();
        return n_->grad;
    }

    void zero_grad() {
        if (!n_->grad.empty()) n_->grad.assign(n_->grad.size(), T(0));
    }

    // dLoss/dLeaf for every requires_grad leaf reachable from this scalar.
    // Interior gradients are recomputed from scratch; leaf gradients
    // accumulate across calls until zero_grad().
    void backward() const {
        if (numel() != 1) throw ShapeError("backward() requires a scalar loss");
        if (!n_->requires_grad) return;

        // Iterative post-order DFS; topo holds children before parents.
        std::vector<detail::Node<T>*> topo;
        std::unordered_set<detail::Node<T>*> seen;
        std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node<T>* p = node->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                topo.push_back(node);
                stack.pop_back();
            }
        }

        // Interior nodes (those with a backward closure) start each pass at
        // zero so repeated backward() calls accumulate only into leaves.
        for (auto* node : topo) {
            if (node->backward) {
                node->ensure_grad();
                std::fill(node->grad.begin(), node->grad.end(), T(0));
            }
        }
        n_->ensure_grad();
        n_->grad[0] += T(1);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

    // --- graph construction helpers used by ops.hpp ---

    std::shared_ptr<detail::Node<T>> node() const { return n_; }

    static Tensor make_op(Shape shape, std::vector<T> value,
                          std::vector<Tensor> inputs,
                          std::function<void(detail::Node<T>&)> backward) {
        if (value.size() != shape_numel(shape))
            throw ShapeError("op produced " + std::to_string(value.size()) +
                             " values for shape " + shape_str(shape));
        for (const T x : value) {
            if (!std::isfinite(x)) throw NumericError("op produced a non-finite value");
        }
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in.requires_grad();
        n->requires_grad = needs;
        if (needs) {
            n->parents.reserve(inputs.size());
            for (const auto& in : inputs) n->parents.push_back(in.node());
            n->backward = std::move(backward);
        }
        return Tensor(std::move(n));
    }

    Tensor detached() const {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = n_->shape;
        n->value = n_->value;
        return Tensor(std::move(n));
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> data(n_->value.begin(), n_->value.end());
        return Tensor<U>::from(n_->shape, std::move(data));
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node<T>> n_;
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace isd
