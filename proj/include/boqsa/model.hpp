#pragma once

// Encoder -> slot attention -> mixture decoder.

#include <optional>

#include "boqsa/codec.hpp"
#include "boqsa/slot_attention.hpp"

namespace boqsa {

struct ModelConfig {
    std::size_t image_size = 32;
    EncoderConfig encoder;
    SlotAttentionConfig slots;
    MixtureDecoderConfig decoder;

    /// Checks cross-module consistency (feature dim, decoder geometry).
    void validate() const;
};

template <typename T>
struct ModelOutput {
    SlotState<T> state;
    MixtureOutput<T> decoded;
    Tensor<T> loss;  // reconstruction MSE
};

template <typename T>
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    /// `step` drives query perturbation (nullopt at inference);
    /// `iterations` overrides T.
    ModelOutput<T> forward(const Tensor<T>& images, std::optional<std::size_t> step, Rng& rng,
                           std::optional<std::size_t> iterations = std::nullopt) const;

    /// All learnable tensors in a stable order with unique names.
    NamedTensors<T> parameters() const;
    void zero_grad();

    Encoder<T> encoder;
    SlotAttention<T> slot_attention;
    MixtureDecoder<T> decoder;

private:
    ModelConfig config_;
};

}  // namespace boqsa
