#include "speakerprof/tensor.hpp"

#include <fmt/format.h>

#include <unordered_set>

#include "speakerprof/errors.hpp"

namespace spkr::ad {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape &shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Real>
TensorT<Real> TensorT<Real>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), Real(0), requires_grad);
}

template <typename Real>
TensorT<Real> TensorT<Real>::full(Shape shape, Real value, bool requires_grad) {
    auto node = std::make_shared<Node<Real>>();
    node->value.assign(ad::numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
}

template <typename Real>
TensorT<Real> TensorT<Real>::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
    if (ad::numel(shape) != data.size())
        throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_str(shape), ad::numel(shape), data.size()));
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
}

template <typename Real>
TensorT<Real> TensorT<Real>::scalar(Real value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

template <typename Real>
Real TensorT<Real>::item() const {
    if (numel() != 1) throw ShapeError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
    return node_->value[0];
}

template <typename Real>
Real TensorT<Real>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis]) throw ShapeError("index out of range");
        flat = flat * node_->shape[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

template <typename Real>
TensorT<Real> TensorT<Real>::detach() const {
    return from_data(shape(), node_->value, false);
}

template <typename Real>
std::vector<Node<Real> *> build_tape(const TensorT<Real> &root) {
    std::vector<Node<Real> *> order;
    std::unordered_set<Node<Real> *> visited;
    // Iterative post-order DFS; graphs from unrolled LSTMs are deep.
    std::vector<std::pair<Node<Real> *, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<Real> *parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

template <typename Real>
void backward(const TensorT<Real> &loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward() needs a scalar loss");
    if (!loss.requires_grad()) throw ShapeError("backward() on a tensor that does not require grad");
    const auto tape = build_tape(loss);
    for (Node<Real> *n : tape)
        if (!n->is_leaf()) n->grad.assign(n->value.size(), Real(0));
    loss.node()->ensure_grad()[0] += Real(1);
    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
        Node<Real> *n = *it;
        if (n->backward) n->backward(*n);
    }
}

template class TensorT<float>;
template class TensorT<double>;
template void backward<float>(const TensorT<float> &);
template void backward<double>(const TensorT<double> &);
template std::vector<Node<float> *> build_tape<float>(const TensorT<float> &);
template std::vector<Node<double> *> build_tape<double>(const TensorT<double> &);

}  // namespace spkr::ad
