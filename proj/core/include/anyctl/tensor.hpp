#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "anyctl/error.hpp"

namespace anyctl {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Reverse-mode autodiff node. Tensors are thin handles onto a shared graph of
// these; backward functions read their own grad and push into parents' grads.
template <class T>
struct TensorNodeT {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily by backward(), empty otherwise
    bool requires_grad = false;
    std::string param_name;  // set only on named parameter leaves
    std::vector<std::shared_ptr<TensorNodeT>> parents;
    std::function<void(TensorNodeT&)> backward_fn;
    const char* op = "leaf";

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording in scope; used for sampling and evaluation.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode_enabled() { return detail::grad_enabled; }

template <class T>
class TensorT {
  public:
    using Node = TensorNodeT<T>;

    TensorT() : node_(std::make_shared<Node>()) {}
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static TensorT full(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value.assign(static_cast<size_t>(numel_of(shape)), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad && detail::grad_enabled;
        return TensorT(std::move(n));
    }

    static TensorT from_vector(Shape shape, std::vector<T> data,
                               bool requires_grad = false) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw ShapeError("from_vector: " + std::to_string(data.size()) +
                             " values for shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad && detail::grad_enabled;
        return TensorT(std::move(n));
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return full({1}, v, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t size(int axis) const { return node_->shape.at(axis); }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    std::vector<T>& data() { return node_->value; }
    const std::vector<T>& data() const { return node_->value; }
    T& operator[](int64_t i) { return node_->value[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const {
        return node_->value[static_cast<size_t>(i)];
    }

    T item() const {
        if (numel() != 1)
            throw ContractError("item() on tensor of shape " +
                                shape_str(shape()));
        return node_->value[0];
    }

    const std::vector<T>& grad() const { return node_->grad; }

    // Copy of the values as a fresh leaf outside any graph.
    TensorT detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        return TensorT(std::move(n));
    }

    std::shared_ptr<Node> node() const { return node_; }
    Node* raw() const { return node_.get(); }

  private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

// Dependency-ordered list of reachable nodes: parents always precede users.
template <class T>
struct ComputationTapeT {
    std::vector<TensorNodeT<T>*> order;

    void build(TensorNodeT<T>* root) {
        order.clear();
        std::unordered_set<TensorNodeT<T>*> done;
        std::vector<std::pair<TensorNodeT<T>*, size_t>> stack;
        stack.emplace_back(root, 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (done.count(node)) {
                stack.pop_back();
                continue;
            }
            if (next < node->parents.size()) {
                TensorNodeT<T>* p = node->parents[next++].get();
                if (!done.count(p)) stack.emplace_back(p, 0);
            } else {
                done.insert(node);
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
};

template <class T>
using GradMapT = std::map<std::string, TensorT<T>>;

using GradMap = GradMapT<float>;

// Runs the reverse sweep from a scalar loss. Returns gradients for every
// named parameter leaf that participates in the graph and requires grad;
// frozen parameters never appear in the result.
template <class T>
GradMapT<T> backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got " +
                            shape_str(loss.shape()));
    ComputationTapeT<T> tape;
    tape.build(loss.raw());
    for (auto* n : tape.order)
        if (n->requires_grad) n->grad.assign(n->value.size(), T(0));
    loss.raw()->grad.assign(1, T(1));
    for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
        TensorNodeT<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    GradMapT<T> grads;
    for (auto* n : tape.order) {
        if (n->param_name.empty() || !n->requires_grad) continue;
        TensorT<T> g = TensorT<T>::zeros(n->shape);
        g.data() = n->grad;
        grads.emplace(n->param_name, std::move(g));
    }
    return grads;
}

namespace detail {

// Common preamble for op implementations: allocates the output node and wires
// parents + backward only while grad recording is on.
template <class T>
TensorT<T> make_op(const char* op, Shape shape,
                   std::vector<std::shared_ptr<TensorNodeT<T>>> parents,
                   std::function<void(TensorNodeT<T>&)> backward_fn) {
    auto n = std::make_shared<TensorNodeT<T>>();
    n->value.assign(static_cast<size_t>(numel_of(shape)), T(0));
    n->shape = std::move(shape);
    n->op = op;
    bool track = false;
    if (grad_enabled)
        for (auto& p : parents)
            if (p->requires_grad) track = true;
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return TensorT<T>(std::move(n));
}

template <class T>
void accumulate(TensorNodeT<T>& parent, int64_t idx, T v) {
    parent.grad[static_cast<size_t>(idx)] += v;
}

}  // namespace detail

}  // namespace anyctl
