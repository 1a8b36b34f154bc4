// Elementwise, reduction, shape and gradient-routing ops.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_support.hpp"

namespace boqsa {

using detail::BroadcastCursor;
using detail::grad_sink;
using detail::ImplPtr;
using detail::make_result;
using detail::normalize_axis;
using detail::TensorImpl;

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = da == 1 ? db : da;
    }
    return out;
}

namespace {

// Shared driver for broadcasting binary ops. `fwd(a, b)` computes the value;
// `bwd(a, b, out, g, ga, gb)` adds the local gradient contributions.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Bwd bwd) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) {
        std::vector<T> out(a.numel());
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
        return make_result<T>(sa, std::move(out), {&a, &b}, name,
                              [bwd](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                                  T* ga = grad_sink(p[0]);
                                  T* gb = grad_sink(p[1]);
                                  const T* xa = p[0]->data.data();
                                  const T* xb = p[1]->data.data();
                                  for (std::size_t i = 0; i < o.data.size(); ++i) {
                                      bwd(xa[i], xb[i], o.data[i], o.grad[i], ga ? ga + i : nullptr,
                                          gb ? gb + i : nullptr);
                                  }
                              });
    }
    Shape shape = broadcast_shapes(sa, sb);
    auto stride_a = detail::broadcast_strides(sa, shape);
    auto stride_b = detail::broadcast_strides(sb, shape);
    std::vector<T> out(shape_numel(shape));
    {
        BroadcastCursor cur(shape, stride_a, stride_b);
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        for (std::size_t i = 0; i < out.size(); ++i, cur.advance()) out[i] = fwd(pa[cur.a()], pb[cur.b()]);
    }
    return make_result<T>(shape, std::move(out), {&a, &b}, name,
                          [bwd, stride_a, stride_b](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* ga = grad_sink(p[0]);
                              T* gb = grad_sink(p[1]);
                              const T* xa = p[0]->data.data();
                              const T* xb = p[1]->data.data();
                              BroadcastCursor cur(o.shape, stride_a, stride_b);
                              for (std::size_t i = 0; i < o.data.size(); ++i, cur.advance()) {
                                  bwd(xa[cur.a()], xb[cur.b()], o.data[i], o.grad[i], ga ? ga + cur.a() : nullptr,
                                      gb ? gb + cur.b() : nullptr);
                              }
                          });
}

// `deriv(x, y)` returns dy/dx given input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
    std::vector<T> out(x.numel());
    const T* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
    return make_result<T>(x.shape(), std::move(out), {&x}, name,
                          [deriv](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              const T* xi = p[0]->data.data();
                              for (std::size_t i = 0; i < o.data.size(); ++i) g[i] += o.grad[i] * deriv(xi[i], o.data[i]);
                          });
}

// Splits a shape around `axis` into (outer, extent, inner) loop counts.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T, T g, T* ga, T* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T, T g, T* ga, T* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T, T g, T* ga, T* gb) {
            if (ga) *ga += g * y;
            if (gb) *gb += g * x;
        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y, T, T g, T* ga, T* gb) {
            if (ga) *ga += g / y;
            if (gb) *gb -= g * x / (y * y);
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary_op(
        x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
    return unary_op(
        x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op(
        x, "neg", [](T v) { return -v; }, [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_op(
        x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return unary_op(
        x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

namespace {
thread_local std::vector<bool>* t_relu_pattern = nullptr;
}  // namespace

ReluPatternRecorder::ReluPatternRecorder() : previous_(t_relu_pattern) { t_relu_pattern = &pattern_; }
ReluPatternRecorder::~ReluPatternRecorder() { t_relu_pattern = previous_; }

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    if (t_relu_pattern) {
        for (T v : x.data()) t_relu_pattern->push_back(v > T{0});
    }
    return unary_op(
        x, "relu", [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(
        x, "sigmoid",
        [](T v) {
            if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
            const T e = std::exp(v);
            return e / (T{1} + e);
        },
        [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary_op(
        x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return unary_op(
        x, "square", [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total{0};
    for (T v : x.data()) total += v;
    return make_result<T>({}, {total}, {&x}, "sum", [](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
        T* g = grad_sink(p[0]);
        const std::size_t n = p[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), ax);
    Shape shape = x.shape();
    if (keepdim) {
        shape[ax] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
    }
    std::vector<T> out(s.outer * s.inner, T{0});
    const T* px = x.data().data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += px[(o * s.extent + e) * s.inner + i];
    return make_result<T>(std::move(shape), std::move(out), {&x}, "sum_axis",
                          [s](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              for (std::size_t a = 0; a < s.outer; ++a)
                                  for (std::size_t e = 0; e < s.extent; ++e)
                                      for (std::size_t i = 0; i < s.inner; ++i)
                                          g[(a * s.extent + e) * s.inner + i] += o.grad[a * s.inner + i];
                          });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim) {
    const std::size_t n = x.dim(axis);
    return scale(sum(x, axis, keepdim), T{1} / static_cast<T>(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>(std::move(shape), std::move(out), {&x}, "reshape",
                          [](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
    const std::size_t r = x.rank();
    if (order.size() != r) throw DimensionError("permute order has wrong length for " + shape_str(x.shape()));
    std::vector<bool> used(r, false);
    for (auto a : order) {
        if (a >= r || used[a]) throw DimensionError("invalid permutation for " + shape_str(x.shape()));
        used[a] = true;
    }
    Shape shape(r);
    const auto in_strides = detail::contiguous_strides(x.shape());
    std::vector<std::size_t> src_strides(r);
    for (std::size_t i = 0; i < r; ++i) {
        shape[i] = x.shape()[order[i]];
        src_strides[i] = in_strides[order[i]];
    }
    // Gather map: out[i] = x[src[i]]; reused by backward as a scatter.
    std::vector<std::size_t> src(x.numel());
    {
        BroadcastCursor cur(shape, src_strides, std::vector<std::size_t>(r, 0));
        for (std::size_t i = 0; i < src.size(); ++i, cur.advance()) src[i] = cur.a();
    }
    std::vector<T> out(x.numel());
    const T* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[src[i]];
    return make_result<T>(std::move(shape), std::move(out), {&x}, "permute",
                          [src = std::move(src)](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
                          });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
    const std::size_t a = normalize_axis(axis_a, x.rank());
    const std::size_t b = normalize_axis(axis_b, x.rank());
    std::vector<std::size_t> order(x.rank());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::swap(order[a], order[b]);
    return permute(x, order);
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& shape) {
    if (broadcast_shapes(x.shape(), shape) != shape) {
        throw DimensionError("cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto strides = detail::broadcast_strides(x.shape(), shape);
    std::vector<T> out(shape_numel(shape));
    {
        BroadcastCursor cur(shape, strides, std::vector<std::size_t>(shape.size(), 0));
        const T* px = x.data().data();
        for (std::size_t i = 0; i < out.size(); ++i, cur.advance()) out[i] = px[cur.a()];
    }
    return make_result<T>(shape, std::move(out), {&x}, "expand",
                          [strides](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              BroadcastCursor cur(o.shape, strides, std::vector<std::size_t>(o.shape.size(), 0));
                              for (std::size_t i = 0; i < o.grad.size(); ++i, cur.advance()) g[cur.a()] += o.grad[i];
                          });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const std::size_t ax = normalize_axis(axis, parts[0].rank());
    Shape reference = parts[0].shape();
    reference[ax] = 0;
    Shape shape = reference;
    for (const auto& t : parts) {
        Shape probe = t.shape();
        if (probe.size() != shape.size()) throw DimensionError("concat rank mismatch: " + shape_str(t.shape()));
        probe[ax] = 0;
        if (probe != reference) {
            throw DimensionError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(t.shape()));
        }
        shape[ax] += t.shape()[ax];
    }
    const AxisSplit whole = split_at(shape, ax);
    std::vector<T> out(shape_numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& t : parts) {
        offsets.push_back(offset);
        const std::size_t ext = t.shape()[ax];
        const T* pt = t.data().data();
        for (std::size_t o = 0; o < whole.outer; ++o)
            std::copy_n(pt + o * ext * whole.inner, ext * whole.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * whole.extent + offset) * whole.inner));
        offset += ext;
    }
    std::vector<const Tensor<T>*> inputs;
    for (const auto& t : parts) inputs.push_back(&t);
    return make_result<T>(shape, std::move(out), inputs, "concat",
                          [whole, offsets, ax](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              for (std::size_t k = 0; k < p.size(); ++k) {
                                  T* g = grad_sink(p[k]);
                                  if (!g) continue;
                                  const std::size_t ext = p[k]->shape[ax];
                                  for (std::size_t a = 0; a < whole.outer; ++a)
                                      for (std::size_t i = 0; i < ext * whole.inner; ++i)
                                          g[a * ext * whole.inner + i] +=
                                              o.grad[(a * whole.extent + offsets[k]) * whole.inner + i];
                              }
                          });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    if (begin > end || end > x.shape()[ax]) {
        throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                             shape_str(x.shape()));
    }
    const AxisSplit s = split_at(x.shape(), ax);
    const std::size_t ext = end - begin;
    Shape shape = x.shape();
    shape[ax] = ext;
    std::vector<T> out(shape_numel(shape));
    const T* px = x.data().data();
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(px + (o * s.extent + begin) * s.inner, ext * s.inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * ext * s.inner));
    return make_result<T>(std::move(shape), std::move(out), {&x}, "slice",
                          [s, begin, ext](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              for (std::size_t a = 0; a < s.outer; ++a)
                                  for (std::size_t i = 0; i < ext * s.inner; ++i)
                                      g[(a * s.extent + begin) * s.inner + i] += o.grad[a * ext * s.inner + i];
                          });
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
    return Tensor<T>::from_data(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& value, const Tensor<T>& ref) {
    if (broadcast_shapes(ref.shape(), value.shape()) != value.shape()) {
        throw DimensionError("straight_through: reference " + shape_str(ref.shape()) + " does not match value " +
                             shape_str(value.shape()));
    }
    auto strides = detail::broadcast_strides(ref.shape(), value.shape());
    std::vector<T> out(value.data().begin(), value.data().end());
    return make_result<T>(value.shape(), std::move(out), {&ref}, "straight_through",
                          [strides](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              BroadcastCursor cur(o.shape, strides, std::vector<std::size_t>(o.shape.size(), 0));
                              for (std::size_t i = 0; i < o.grad.size(); ++i, cur.advance()) g[cur.a()] += o.grad[i];
                          });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
    if (prediction.shape() != target.shape()) {
        throw DimensionError("mse_loss shape mismatch: " + shape_str(prediction.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    return mean(square(sub(prediction, target)));
}

#define BOQSA_INSTANTIATE(T)                                                                 \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> scale(const Tensor<T>&, T);                                           \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
    template Tensor<T> neg(const Tensor<T>&);                                                \
    template Tensor<T> exp(const Tensor<T>&);                                                \
    template Tensor<T> log(const Tensor<T>&);                                                \
    template Tensor<T> relu(const Tensor<T>&);                                               \
    template Tensor<T> sigmoid(const Tensor<T>&);                                            \
    template Tensor<T> tanh(const Tensor<T>&);                                               \
    template Tensor<T> square(const Tensor<T>&);                                             \
    template Tensor<T> sum(const Tensor<T>&);                                                \
    template Tensor<T> sum(const Tensor<T>&, int, bool);                                     \
    template Tensor<T> mean(const Tensor<T>&);                                               \
    template Tensor<T> mean(const Tensor<T>&, int, bool);                                    \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);           \
    template Tensor<T> transpose(const Tensor<T>&, int, int);                                \
    template Tensor<T> expand(const Tensor<T>&, const Shape&);                               \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                           \
    template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);               \
    template Tensor<T> detach(const Tensor<T>&);                                             \
    template Tensor<T> straight_through(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);

BOQSA_INSTANTIATE(float)
BOQSA_INSTANTIATE(double)

}  // namespace boqsa
