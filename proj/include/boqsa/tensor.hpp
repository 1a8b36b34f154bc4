#pragma once

// Dense row-major tensors with a reverse-mode autodiff graph.
//
// A Tensor is a cheap handle to shared storage. Operations (see ops.hpp)
// record a Node on their result when gradient recording is enabled and at
// least one input requires a gradient. backward() walks the recorded graph
// in reverse topological order and accumulates into every reachable
// requires-grad tensor.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace boqsa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
struct Node {
    // Reads out.grad and accumulates into the parents that require grad.
    using BackwardFn = std::function<void(const TensorImpl<T>& out, std::span<const ImplPtr<T>> parents)>;

    const char* op = "";
    std::vector<ImplPtr<T>> parents;
    BackwardFn backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation (leaves: allocated eagerly)
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T{0});
        return grad;
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;
    using Impl = detail::TensorImpl<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    /// Extent of `axis`; negative axes count from the end.
    std::size_t dim(int axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Direct value access for initializers and optimizers; bypasses the graph.
    std::span<T> mutable_data() { return impl_->data; }
    T item() const;
    T at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

    bool requires_grad() const { return impl_->requires_grad; }
    /// Only meaningful on leaves. Turning it on allocates a zeroed gradient.
    void set_requires_grad(bool on);
    bool is_leaf() const { return impl_->node == nullptr; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient buffer; zeros if nothing has been accumulated yet.
    std::span<const T> grad() const;
    std::span<T> mutable_grad() { return impl_->grad_buffer(); }
    void zero_grad();

    /// Value copy into another precision; the result is a fresh leaf.
    template <typename U>
    Tensor<U> cast(bool requires_grad = false) const {
        std::vector<U> out(impl_->data.begin(), impl_->data.end());
        return Tensor<U>::from_data(impl_->shape, std::move(out), requires_grad);
    }

    /// Deep copy of values (no graph, same requires_grad flag).
    Tensor clone() const;

    const std::shared_ptr<Impl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<Impl> impl_;
};

/// Accumulates d(loss)/d(t) into every requires-grad tensor reachable from
/// `loss`. Gradients add onto whatever is already stored; call zero_grad()
/// between independent passes.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace boqsa
