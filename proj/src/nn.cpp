#include "boqsa/nn.hpp"

#include <cmath>

namespace boqsa {

template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data(std::move(shape), std::move(data), true);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    : weight(xavier_uniform<T>({out, in}, in, out, rng)) {
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim) : gain(Tensor<T>::full({dim}, T{1}, true)), bias(Tensor<T>::zeros({dim}, true)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
GruCell<T>::GruCell(std::size_t input, std::size_t hidden, Rng& rng)
    : weight_ih(xavier_uniform<T>({3 * hidden, input}, input, hidden, rng)),
      weight_hh(xavier_uniform<T>({3 * hidden, hidden}, hidden, hidden, rng)),
      bias_ih(Tensor<T>::zeros({3 * hidden}, true)),
      bias_hh(Tensor<T>::zeros({3 * hidden}, true)) {}

template <typename T>
void GruCell<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight_ih", weight_ih);
    out.emplace_back(prefix + ".weight_hh", weight_hh);
    out.emplace_back(prefix + ".bias_ih", bias_ih);
    out.emplace_back(prefix + ".bias_hh", bias_hh);
}

template <typename T>
Tensor<T> gru_step(const Tensor<T>& h, const Tensor<T>& x, const GruCell<T>& cell) {
    const std::size_t hidden = cell.hidden();
    if (h.rank() != 2 || x.rank() != 2 || h.dim(0) != x.dim(0) || h.dim(1) != hidden ||
        x.dim(1) != cell.weight_ih.dim(1)) {
        throw DimensionError("gru_step: hidden " + shape_str(h.shape()) + " and input " + shape_str(x.shape()) +
                             " do not match the cell");
    }
    const Tensor<T> gi = linear(x, cell.weight_ih, cell.bias_ih);
    const Tensor<T> gh = linear(h, cell.weight_hh, cell.bias_hh);
    const Tensor<T> r = sigmoid(add(slice(gi, 1, 0, hidden), slice(gh, 1, 0, hidden)));
    const Tensor<T> z = sigmoid(add(slice(gi, 1, hidden, 2 * hidden), slice(gh, 1, hidden, 2 * hidden)));
    const Tensor<T> n = tanh(add(slice(gi, 1, 2 * hidden, 3 * hidden), mul(r, slice(gh, 1, 2 * hidden, 3 * hidden))));
    // (1 - z) * n + z * h
    return add(mul(add_scalar(neg(z), T{1}), n), mul(z, h));
}

template <typename T>
Mlp<T>::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : fc1(in, hidden, true, rng), fc2(hidden, out, true, rng) {}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

template <typename T>
Tensor<T> positional_grid(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw DimensionError("positional_grid needs positive extents");
    std::vector<T> data(4 * h * w);
    const auto ramp = [](std::size_t i, std::size_t n) {
        return n == 1 ? T{0} : static_cast<T>(i) / static_cast<T>(n - 1);
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const T u = ramp(x, w), v = ramp(y, h);
            const std::size_t p = y * w + x;
            data[0 * h * w + p] = u;
            data[1 * h * w + p] = T{1} - u;
            data[2 * h * w + p] = v;
            data[3 * h * w + p] = T{1} - v;
        }
    }
    return Tensor<T>::from_data({4, h, w}, std::move(data));
}

template <typename T>
Tensor<T> PositionalEmbedding<T>::operator()(std::size_t h, std::size_t w) const {
    // [4, h, w] -> [h * w, 4] -> [h * w, dim]
    const Tensor<T> grid = reshape(permute(positional_grid<T>(h, w), {1, 2, 0}), {h * w, 4});
    return proj(grid);
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dGeometry geo, Rng& rng)
    : weight(xavier_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, out * kernel * kernel, rng)),
      bias(Tensor<T>::zeros({out}, true)),
      geometry(geo) {}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dGeometry geo, Rng& rng)
    : weight(xavier_uniform<T>({in, out, kernel, kernel}, out * kernel * kernel, in * kernel * kernel, rng)),
      bias(Tensor<T>::zeros({out}, true)),
      geometry(geo) {}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

#define BOQSA_INSTANTIATE(T)                                                                 \
    template Tensor<T> xavier_uniform<T>(Shape, std::size_t, std::size_t, Rng&);             \
    template struct Linear<T>;                                                               \
    template struct LayerNorm<T>;                                                            \
    template struct GruCell<T>;                                                              \
    template Tensor<T> gru_step<T>(const Tensor<T>&, const Tensor<T>&, const GruCell<T>&);   \
    template struct Mlp<T>;                                                                  \
    template Tensor<T> positional_grid<T>(std::size_t, std::size_t);                         \
    template struct PositionalEmbedding<T>;                                                  \
    template struct Conv2d<T>;                                                               \
    template struct ConvTranspose2d<T>;

BOQSA_INSTANTIATE(float)
BOQSA_INSTANTIATE(double)

}  // namespace boqsa
