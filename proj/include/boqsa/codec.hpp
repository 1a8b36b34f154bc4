#pragma once

// CNN image encoder and mixture (spatial-broadcast) decoder.

#include <string>

#include "boqsa/nn.hpp"

namespace boqsa {

struct EncoderConfig {
    std::size_t in_channels = 3;
    std::size_t channels = 64;
    std::size_t layers = 4;
    std::size_t kernel = 5;
    std::size_t padding = 2;
    std::size_t first_stride = 1;  // 2 for the downsampling variant
    bool feature_mlp = true;       // per-position layernorm + 2-layer MLP after flattening

    void validate() const;
    /// Spatial extent of the feature grid for an input extent.
    std::size_t feature_extent(std::size_t image_extent) const;
};

/// `upsample_layers` stride-2 transposed convs (k5) grow the broadcast grid to
/// the image size, stride-1 k5 layers pad the stack to five hidden layers,
/// and a final k3 layer emits RGB + mask logit. Default geometry is 4
/// upsampling layers, i.e. a broadcast grid of image / 16.
struct MixtureDecoderConfig {
    std::size_t channels = 64;
    std::size_t hidden_layers = 5;
    std::size_t upsample_layers = 4;
    std::size_t kernel = 5;
    std::size_t final_kernel = 3;

    void validate(std::size_t image_size) const;
    std::size_t grid_extent(std::size_t image_size) const { return image_size >> upsample_layers; }
};

template <typename T>
class Encoder {
public:
    Encoder(const EncoderConfig& config, std::size_t image_size, Rng& rng);

    const EncoderConfig& config() const { return config_; }
    std::size_t image_size() const { return image_size_; }
    std::size_t feature_dim() const { return config_.channels; }
    std::size_t num_positions() const;

    /// image [B, 3, H, W] in [0, 1] -> features [B, N, C].
    Tensor<T> operator()(const Tensor<T>& image) const;

    std::vector<Conv2d<T>> convs;
    PositionalEmbedding<T> position;
    LayerNorm<T> norm;
    Mlp<T> mlp;

    void collect(const std::string& prefix, NamedTensors<T>& out) const;

private:
    EncoderConfig config_;
    std::size_t image_size_;
};

template <typename T>
struct MixtureOutput {
    Tensor<T> recon;         // [B, 3, H, W]
    Tensor<T> masks;         // [B, K, 1, H, W], softmax over K
    Tensor<T> rgb_per_slot;  // [B, K, 3, H, W]
};

template <typename T>
class MixtureDecoder {
public:
    MixtureDecoder(const MixtureDecoderConfig& config, std::size_t slot_dim, std::size_t image_size, Rng& rng);

    const MixtureDecoderConfig& config() const { return config_; }

    /// slots [B, K, D] -> per-slot RGB, masks and their composite.
    MixtureOutput<T> operator()(const Tensor<T>& slots) const;

    PositionalEmbedding<T> position;
    std::vector<ConvTranspose2d<T>> layers;

    void collect(const std::string& prefix, NamedTensors<T>& out) const;

private:
    MixtureDecoderConfig config_;
    std::size_t slot_dim_;
    std::size_t image_size_;
};

enum class MseConvention { per_pixel, slate_total };

std::string to_string(MseConvention convention);

/// Mean squared error over every pixel and channel (training objective).
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& recon, const Tensor<T>& image);

/// Reported MSE: per_pixel is the mean; slate_total multiplies the mean by
/// the pixel count H * W of one image. Both inputs are [..., H, W].
template <typename T>
double mse_report(const Tensor<T>& recon, const Tensor<T>& image, MseConvention convention);

}  // namespace boqsa
