#pragma once

// Internal helpers shared by the op translation units.

#include <initializer_list>
#include <string>
#include <vector>

#include "boqsa/ops.hpp"

namespace boqsa::detail {

inline std::size_t normalize_axis(int axis, std::size_t rank) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

inline std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

/// Strides for reading `src` as if it had shape `dst` (0 on stretched dims).
inline std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& dst) {
    std::vector<std::size_t> out(dst.size(), 0);
    const auto src_strides = contiguous_strides(src);
    const std::size_t offset = dst.size() - src.size();
    for (std::size_t i = 0; i < src.size(); ++i) {
        out[offset + i] = src[i] == 1 ? 0 : src_strides[i];
    }
    return out;
}

/// Walks a row-major index space while tracking offsets into two
/// broadcast operands.
class BroadcastCursor {
public:
    BroadcastCursor(const Shape& shape, std::vector<std::size_t> strides_a, std::vector<std::size_t> strides_b)
        : shape_(shape), sa_(std::move(strides_a)), sb_(std::move(strides_b)), index_(shape.size(), 0) {}

    std::size_t a() const { return a_; }
    std::size_t b() const { return b_; }

    void advance() {
        for (std::size_t d = shape_.size(); d-- > 0;) {
            if (++index_[d] < shape_[d]) {
                a_ += sa_[d];
                b_ += sb_[d];
                return;
            }
            a_ -= sa_[d] * (shape_[d] - 1);
            b_ -= sb_[d] * (shape_[d] - 1);
            index_[d] = 0;
        }
    }

private:
    const Shape& shape_;
    std::vector<std::size_t> sa_, sb_;
    std::vector<std::size_t> index_;
    std::size_t a_ = 0, b_ = 0;
};

/// Builds an op result and, when recording, attaches its graph node.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, typename Node<T>::BackwardFn fn) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto* in : inputs) needs = needs || (in->defined() && in->requires_grad());
    }
    if (needs) {
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        for (const auto* in : inputs) node->parents.push_back(in->defined() ? in->impl() : nullptr);
        node->backward = std::move(fn);
        impl->requires_grad = true;
        impl->node = std::move(node);
    }
    return Tensor<T>(std::move(impl));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<const Tensor<T>*>& inputs, const char* op,
                      typename Node<T>::BackwardFn fn) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto* in : inputs) needs = needs || in->requires_grad();
    }
    if (needs) {
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        for (const auto* in : inputs) node->parents.push_back(in->impl());
        node->backward = std::move(fn);
        impl->requires_grad = true;
        impl->node = std::move(node);
    }
    return Tensor<T>(std::move(impl));
}

/// Parent gradient buffer, or nullptr when that parent takes no gradient.
template <typename T>
T* grad_sink(const ImplPtr<T>& parent) {
    if (!parent || !parent->requires_grad) return nullptr;
    return parent->grad_buffer().data();
}

}  // namespace boqsa::detail
