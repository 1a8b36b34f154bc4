#pragma once

// Parameterized layers built from tensor ops. Layers are plain aggregates of
// leaf tensors; forward passes are pure functions of (parameters, inputs).

#include <string>
#include <utility>
#include <vector>

#include "boqsa/ops.hpp"
#include "boqsa/random.hpp"

namespace boqsa {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Xavier-uniform leaf with the given fan sizes.
template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

template <typename T>
struct Linear {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out] or undefined

    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, NamedTensors<T>& out) const;
};

template <typename T>
struct LayerNorm {
    Tensor<T> gain;
    Tensor<T> bias;
    T eps = T(1e-5);

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gain, bias, eps); }
    void collect(const std::string& prefix, NamedTensors<T>& out) const;
};

/// Gate order inside the stacked weights is (reset, update, candidate):
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
template <typename T>
struct GruCell {
    Tensor<T> weight_ih;  // [3H, in]
    Tensor<T> weight_hh;  // [3H, H]
    Tensor<T> bias_ih;    // [3H]
    Tensor<T> bias_hh;    // [3H]

    GruCell() = default;
    GruCell(std::size_t input, std::size_t hidden, Rng& rng);

    std::size_t hidden() const { return weight_hh.dim(1); }
    void collect(const std::string& prefix, NamedTensors<T>& out) const;
};

/// One recurrence step; h and x are [rows, H] and [rows, in].
template <typename T>
Tensor<T> gru_step(const Tensor<T>& h, const Tensor<T>& x, const GruCell<T>& cell);

/// Linear -> ReLU -> Linear.
template <typename T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;

    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }
    void collect(const std::string& prefix, NamedTensors<T>& out) const;
};

/// [4, h, w] coordinate ramps ordered (left, right, top, bottom): left runs
/// 0 -> 1 along x, right = 1 - left; top runs 0 -> 1 along y,
/// bottom = 1 - top. A unit extent sits at coordinate 0.
template <typename T>
Tensor<T> positional_grid(std::size_t h, std::size_t w);

/// Learnable projection of the 4-ramp grid to `dim` channels.
template <typename T>
struct PositionalEmbedding {
    Linear<T> proj;

    PositionalEmbedding() = default;
    PositionalEmbedding(std::size_t dim, Rng& rng) : proj(4, dim, true, rng) {}

    /// [h * w, dim], row-major over (y, x).
    Tensor<T> operator()(std::size_t h, std::size_t w) const;
    void collect(const std::string& prefix, NamedTensors<T>& out) const { proj.collect(prefix + ".proj", out); }
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [out, in, k, k]
    Tensor<T> bias;    // [out]
    Conv2dGeometry geometry;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dGeometry geometry, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, geometry); }
    void collect(const std::string& prefix, NamedTensors<T>& out) const;
};

template <typename T>
struct ConvTranspose2d {
    Tensor<T> weight;  // [in, out, k, k]
    Tensor<T> bias;    // [out]
    Conv2dGeometry geometry;

    ConvTranspose2d() = default;
    ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dGeometry geometry, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight, bias, geometry); }
    void collect(const std::string& prefix, NamedTensors<T>& out) const;
};

}  // namespace boqsa
