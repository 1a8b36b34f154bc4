#include "boqsa/model.hpp"

#include <stdexcept>

namespace boqsa {

void ModelConfig::validate() const {
    encoder.validate();
    slots.validate();
    decoder.validate(image_size);
    if (slots.input_dim != encoder.channels) {
        throw std::invalid_argument("slot input_dim (" + std::to_string(slots.input_dim) +
                                    ") must equal encoder channels (" + std::to_string(encoder.channels) + ")");
    }
    (void)encoder.feature_extent(image_size);
}

namespace {

// Separate streams per sub-module so that, e.g., changing the decoder width
// leaves the encoder initialization untouched.
template <typename Make>
auto build_with(std::uint64_t seed, std::uint64_t salt, Make make) {
    Rng rng(mix_seed(seed, salt));
    return make(rng);
}

ModelConfig checked(const ModelConfig& config) {
    config.validate();
    return config;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed)
    : encoder(build_with(seed, 1, [&](Rng& rng) { return Encoder<T>(checked(config).encoder, config.image_size, rng); })),
      slot_attention(build_with(seed, 2, [&](Rng& rng) { return SlotAttention<T>(config.slots, rng); })),
      decoder(build_with(seed, 3, [&](Rng& rng) {
          return MixtureDecoder<T>(config.decoder, config.slots.slot_dim, config.image_size, rng);
      })),
      config_(config) {}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& images, std::optional<std::size_t> step, Rng& rng,
                                 std::optional<std::size_t> iterations) const {
    ModelOutput<T> out;
    const Tensor<T> features = encoder(images);
    RunOptions<T> options;
    options.iterations = iterations;
    out.state = slot_attention.run(features, step, rng, options);
    out.decoded = decoder(out.state.slots);
    out.loss = reconstruction_loss(out.decoded.recon, images);
    return out;
}

template <typename T>
NamedTensors<T> Model<T>::parameters() const {
    NamedTensors<T> out;
    encoder.collect("encoder", out);
    slot_attention.collect("slot_attention", out);
    decoder.collect("decoder", out);
    return out;
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& [name, t] : parameters()) t.zero_grad();
}

template class Model<float>;
template class Model<double>;

}  // namespace boqsa
