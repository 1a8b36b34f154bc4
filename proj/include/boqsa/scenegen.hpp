#pragma once

// Deterministic multi-sprite scenes with exact instance masks.
//
// Rasterization is integer-only (pixel centres in half-pixel units), and all
// randomness comes from boqsa::Rng, so a (config, seed) pair yields the same
// bytes on every platform.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "boqsa/tensor.hpp"

namespace boqsa {

enum class SpriteShape : std::uint8_t { circle, square, triangle };

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb8&) const = default;
};

struct SceneConfig {
    std::string name = "custom";
    std::size_t image_size = 32;
    std::size_t min_sprites = 2;
    std::size_t max_sprites = 4;
    std::size_t min_sprite_size = 8;   // bounding-box edge in pixels
    std::size_t max_sprite_size = 13;
    std::size_t min_visible_pixels = 6;
    std::vector<SpriteShape> shapes{SpriteShape::circle, SpriteShape::square, SpriteShape::triangle};
    std::vector<Rgb8> palette = default_palette();
    bool allow_overlap = true;
    std::uint64_t seed = 0;
    std::size_t max_attempts = 200;  // per sample

    static std::vector<Rgb8> default_palette();
    void validate() const;
};

/// "sprites2": exactly two sprites (models use K = 3);
/// "sprites4": two to four sprites (K = 5).
SceneConfig scene_preset(const std::string& name);
/// Slot count paired with a preset.
std::size_t preset_slot_count(const std::string& name);

class GenerationError : public std::runtime_error {
public:
    GenerationError(std::size_t sample, const std::string& what)
        : std::runtime_error("sample " + std::to_string(sample) + ": " + what), sample_(sample) {}
    std::size_t sample() const { return sample_; }

private:
    std::size_t sample_;
};

struct SceneSample {
    std::size_t size = 0;                // square images
    std::vector<std::uint8_t> rgb;       // [H, W, 3] interleaved
    std::vector<std::uint8_t> labels;    // [H, W]; 0 = background, i = i-th sprite in draw order
    std::size_t num_instances = 0;

    std::size_t pixels() const { return size * size; }
    std::vector<std::uint8_t> instance_mask(std::size_t instance) const;  // instance in [0, num_instances)
    std::vector<std::vector<std::uint8_t>> instance_masks() const;
    std::vector<std::uint8_t> background_mask() const;

    /// Image as [3, H, W] with values byte / 255.
    template <typename T>
    Tensor<T> image() const;
};

struct Dataset {
    SceneConfig config;
    std::vector<SceneSample> samples;

    std::size_t size() const { return samples.size(); }
    std::size_t image_size() const { return config.image_size; }
    /// Stacks samples[indices] into [B, 3, H, W].
    template <typename T>
    Tensor<T> batch(const std::vector<std::size_t>& indices) const;
};

/// Sample i is drawn from its own stream seeded by mix_seed(config.seed, i).
SceneSample generate_sample(const SceneConfig& config, std::size_t index);
Dataset generate(const SceneConfig& config, std::size_t count, std::size_t threads = 1);

/// Layout: manifest (key=value), images/NNNNN.png (RGB8), masks/NNNNN.png
/// (gray8, pixel value = instance id, 0 = background).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// SHA-256 over image geometry, pixels and labels (hex).
std::string dataset_hash(const Dataset& dataset);

}  // namespace boqsa
