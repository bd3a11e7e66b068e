#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spkr::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape &shape);
std::string shape_str(const Shape &shape);

template <typename Real>
struct Node;

template <typename Real>
using BackwardFn = std::function<void(Node<Real> &)>;

// One vertex of the computation graph. `backward` reads this node's grad and
// accumulates into the grads of its parents that require one.
template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until first needed
    bool requires_grad = false;
    const char *op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn<Real> backward;

    bool is_leaf() const { return parents.empty(); }
    std::vector<Real> &ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), Real(0));
        return grad;
    }
};

// Dense row-major tensor with shared-handle semantics: copies alias the same
// node, as parameters must when they are referenced from several places.
template <typename Real>
class TensorT {
   public:
    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

    static TensorT zeros(Shape shape, bool requires_grad = false);
    static TensorT full(Shape shape, Real value, bool requires_grad = false);
    static TensorT from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
    static TensorT scalar(Real value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const Real> data() const { return node_->value; }
    // Direct write access, meant for leaves (parameter updates, test setup).
    std::span<Real> mutable_data() { return node_->value; }
    Real item() const;
    Real at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const Real> grad() const { return node_->grad; }
    std::span<Real> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    // Same values, no history, requires_grad off.
    TensorT detach() const;
    bool is_leaf() const { return node_->is_leaf(); }
    const char *op() const { return node_->op; }

    Node<Real> *node() const { return node_.get(); }
    const std::shared_ptr<Node<Real>> &node_ptr() const { return node_; }

   private:
    std::shared_ptr<Node<Real>> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Graph recording is on by default; a guard turns it off for its scope on
// the current thread (evaluation, parameter updates).
bool grad_enabled();

class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

   private:
    bool previous_;
};

// Reverse-mode sweep from a scalar. The tape is the reverse topological order
// of the graph reachable from `loss`; each node is visited exactly once.
// Leaf gradients accumulate (+=) across calls, so calling backward twice
// without zero_grad doubles them. Interior gradients are reset per call.
template <typename Real>
void backward(const TensorT<Real> &loss);

// Topological order of the recorded graph ending at `root` (inputs first).
template <typename Real>
std::vector<Node<Real> *> build_tape(const TensorT<Real> &root);

}  // namespace spkr::ad
