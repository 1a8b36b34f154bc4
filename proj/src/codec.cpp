#include "boqsa/codec.hpp"

#include <stdexcept>

namespace boqsa {

void EncoderConfig::validate() const {
    if (layers < 1 || channels < 1 || kernel < 1) throw std::invalid_argument("encoder needs layers, channels and kernel >= 1");
    if (first_stride != 1 && first_stride != 2) throw std::invalid_argument("encoder first_stride must be 1 or 2");
}

std::size_t EncoderConfig::feature_extent(std::size_t image_extent) const {
    std::size_t e = image_extent;
    for (std::size_t i = 0; i < layers; ++i) {
        const std::size_t stride = i == 0 ? first_stride : 1;
        if (e + 2 * padding < kernel) throw DimensionError("encoder kernel larger than padded input");
        e = (e + 2 * padding - kernel) / stride + 1;
    }
    return e;
}

void MixtureDecoderConfig::validate(std::size_t image_size) const {
    if (upsample_layers > hidden_layers) throw std::invalid_argument("decoder upsample_layers exceeds hidden_layers");
    if (kernel % 2 == 0 || final_kernel % 2 == 0) throw std::invalid_argument("decoder kernels must be odd");
    const std::size_t grid = grid_extent(image_size);
    if (grid == 0 || (grid << upsample_layers) != image_size) {
        throw std::invalid_argument("image size " + std::to_string(image_size) + " is not divisible by 2^" +
                                    std::to_string(upsample_layers));
    }
}

std::string to_string(MseConvention convention) {
    return convention == MseConvention::per_pixel ? "per_pixel" : "slate_total";
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, std::size_t image_size, Rng& rng)
    : config_(config), image_size_(image_size) {
    config_.validate();
    const std::size_t c = config.channels;
    for (std::size_t i = 0; i < config.layers; ++i) {
        const Conv2dGeometry geo{i == 0 ? config.first_stride : 1, config.padding, 0};
        convs.emplace_back(i == 0 ? config.in_channels : c, c, config.kernel, geo, rng);
    }
    position = PositionalEmbedding<T>(c, rng);
    if (config.feature_mlp) {
        norm = LayerNorm<T>(c);
        mlp = Mlp<T>(c, c, c, rng);
    }
    (void)config_.feature_extent(image_size);
}

template <typename T>
std::size_t Encoder<T>::num_positions() const {
    const std::size_t e = config_.feature_extent(image_size_);
    return e * e;
}

template <typename T>
Tensor<T> Encoder<T>::operator()(const Tensor<T>& image) const {
    if (image.rank() != 4 || image.dim(1) != config_.in_channels || image.dim(2) != image_size_ ||
        image.dim(3) != image_size_) {
        throw DimensionError("encoder expects [B, " + std::to_string(config_.in_channels) + ", " +
                             std::to_string(image_size_) + ", " + std::to_string(image_size_) + "], got " +
                             shape_str(image.shape()));
    }
    Tensor<T> x = image;
    for (const auto& conv : convs) x = relu(conv(x));
    const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    // [B, C, H, W] -> [B, H*W, C], then add the position embedding.
    x = reshape(permute(x, {0, 2, 3, 1}), {batch, h * w, c});
    x = add(x, position(h, w));
    if (config_.feature_mlp) x = mlp(norm(x));
    return x;
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
    position.collect(prefix + ".position", out);
    if (config_.feature_mlp) {
        norm.collect(prefix + ".norm", out);
        mlp.collect(prefix + ".mlp", out);
    }
}

template <typename T>
MixtureDecoder<T>::MixtureDecoder(const MixtureDecoderConfig& config, std::size_t slot_dim, std::size_t image_size,
                                  Rng& rng)
    : config_(config), slot_dim_(slot_dim), image_size_(image_size) {
    config_.validate(image_size);
    position = PositionalEmbedding<T>(slot_dim, rng);
    std::size_t in = slot_dim;
    for (std::size_t i = 0; i < config.hidden_layers; ++i) {
        const bool up = i < config.upsample_layers;
        const Conv2dGeometry geo{up ? 2u : 1u, config.kernel / 2, up ? 1u : 0u};
        layers.emplace_back(in, config.channels, config.kernel, geo, rng);
        in = config.channels;
    }
    layers.emplace_back(in, 4, config.final_kernel, Conv2dGeometry{1, config.final_kernel / 2, 0}, rng);
}

template <typename T>
MixtureOutput<T> MixtureDecoder<T>::operator()(const Tensor<T>& slots) const {
    if (slots.rank() != 3 || slots.dim(2) != slot_dim_) {
        throw DimensionError("decoder expects slots [B, K, " + std::to_string(slot_dim_) + "], got " +
                             shape_str(slots.shape()));
    }
    const std::size_t batch = slots.dim(0), k = slots.dim(1), d = slot_dim_;
    const std::size_t g = config_.grid_extent(image_size_), hw = image_size_;
    // Spatial broadcast: tile every slot over the grid and add positions.
    Tensor<T> x = expand(reshape(slots, {batch * k, d, 1, 1}), {batch * k, d, g, g});
    const Tensor<T> pos = reshape(permute(position(g, g), {1, 0}), {1, d, g, g});
    x = add(x, pos);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i](x);
        if (i + 1 < layers.size()) x = relu(x);
    }
    x = reshape(x, {batch, k, 4, hw, hw});
    MixtureOutput<T> out;
    out.rgb_per_slot = sigmoid(slice(x, 2, 0, 3));
    out.masks = softmax(slice(x, 2, 3, 4), 1);
    out.recon = sum(mul(out.masks, out.rgb_per_slot), 1);
    return out;
}

template <typename T>
void MixtureDecoder<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    position.collect(prefix + ".position", out);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".deconv" + std::to_string(i), out);
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& recon, const Tensor<T>& image) {
    return mse_loss(recon, image);
}

template <typename T>
double mse_report(const Tensor<T>& recon, const Tensor<T>& image, MseConvention convention) {
    if (recon.shape() != image.shape() || recon.rank() < 2) {
        throw DimensionError("mse_report shape mismatch: " + shape_str(recon.shape()) + " vs " + shape_str(image.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < recon.numel(); ++i) {
        const double diff = static_cast<double>(recon.at(i)) - static_cast<double>(image.at(i));
        total += diff * diff;
    }
    const double per_pixel = total / static_cast<double>(recon.numel());
    if (convention == MseConvention::per_pixel) return per_pixel;
    return per_pixel * static_cast<double>(recon.dim(-1) * recon.dim(-2));
}

template class Encoder<float>;
template class Encoder<double>;
template class MixtureDecoder<float>;
template class MixtureDecoder<double>;
template Tensor<float> reconstruction_loss<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> reconstruction_loss<double>(const Tensor<double>&, const Tensor<double>&);
template double mse_report<float>(const Tensor<float>&, const Tensor<float>&, MseConvention);
template double mse_report<double>(const Tensor<double>&, const Tensor<double>&, MseConvention);

}  // namespace boqsa
