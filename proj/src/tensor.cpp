#include "boqsa/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace boqsa {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    std::vector<T> data(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                             " elements, got " + std::to_string(data.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    Tensor t(std::move(impl));
    t.set_requires_grad(requires_grad);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return from_data({}, {value});
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return impl_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on && impl_->node == nullptr) impl_->grad_buffer();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return impl_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return from_data(impl_->shape, impl_->data, impl_->requires_grad);
}

template <typename T>
void backward(const Tensor<T>& loss) {
    using ImplPtr = detail::ImplPtr<T>;
    if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; reversed it is a valid consumer-first order.
    std::vector<detail::TensorImpl<T>*> order;
    std::unordered_set<const detail::TensorImpl<T>*> seen;
    std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        const auto& node = impl->node;
        if (node && next < node->parents.size()) {
            const ImplPtr& parent = node->parents[next++];
            if (parent && parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(parent.get(), 0);
            continue;
        }
        order.push_back(impl);
        stack.pop_back();
    }

    loss.impl()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* impl = *it;
        if (!impl->node || impl->grad.empty()) continue;
        impl->node->backward(*impl, impl->node->parents);
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace boqsa
