#pragma once

// Differentiable operations over Tensor<T>. Every function here is
// instantiated for float and double.
//
// Binary elementwise ops broadcast numpy-style (trailing dims aligned,
// extent 1 stretches). Axis arguments accept negative values.

#include <vector>

#include "boqsa/tensor.hpp"

namespace boqsa {

Shape broadcast_shapes(const Shape& a, const Shape& b);

// elementwise
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);

// reductions
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false);

// shape
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);
template <typename T> Tensor<T> expand(const Tensor<T>& x, const Shape& shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end);

// linear algebra
/// a[..., M, K] x b[..., K, N]; leading dims broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] * weight[out, in]^T + bias[out]. bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// normalization
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
/// Normalizes over the last axis. gain/bias may be undefined (identity affine).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

// convolution, NCHW
struct Conv2dGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t output_padding = 0;  // transposed conv only
};

/// x[B, C, H, W] with weight[O, C, kh, kw]; bias[O] may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geometry);
/// x[B, Cin, H, W] with weight[Cin, Cout, kh, kw]; bias[Cout] may be undefined.
/// Output extent: (H - 1) * stride - 2 * padding + kh + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           Conv2dGeometry geometry);

// gradient routing
/// Same values, no gradient path back to x.
template <typename T> Tensor<T> detach(const Tensor<T>& x);
/// Forwards the values of `value` exactly while routing the upstream
/// gradient to `ref` with an identity Jacobian (SG(value) + ref - SG(ref)).
/// `ref` may omit leading extent-1 dims or broadcast over them; its
/// gradient is summed accordingly. `value` receives no gradient.
template <typename T> Tensor<T> straight_through(const Tensor<T>& value, const Tensor<T>& ref);

/// While alive, records the sign (x > 0) of every relu input evaluated on
/// this thread, in evaluation order. Finite-difference checks use it to tell
/// whether a perturbation moved any unit across the kink.
class ReluPatternRecorder {
public:
    ReluPatternRecorder();
    ~ReluPatternRecorder();
    ReluPatternRecorder(const ReluPatternRecorder&) = delete;
    ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;
    const std::vector<bool>& pattern() const { return pattern_; }

private:
    std::vector<bool> pattern_;
    std::vector<bool>* previous_;
};

// losses
template <typename T> Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

}  // namespace boqsa
