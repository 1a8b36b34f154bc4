#pragma once

// Training configuration and its flat key=value text form.
//
// Every field is addressable by a dotted key ("train.lr", "slots.regime",
// "decoder.channels", ...). The same keys are accepted in config files and
// as command-line overrides, and the canonical dump of all keys is the
// config echo stored in checkpoints.

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "boqsa/model.hpp"

namespace boqsa {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
    std::size_t batch_size = 128;
    double lr = 4e-4;
    std::size_t warmup_steps = 5000;
    std::size_t decay_steps = 50000;  // half-life of the exponential decay
    std::size_t max_steps = 250000;
    std::uint64_t seed = 0;
    double grad_clip = 0.0;             // global-norm clip; 0 disables
    std::size_t checkpoint_every = 0;   // 0: max_steps / 10
    std::size_t log_every = 1;
    std::string dataset;
    std::string out_dir = "run";
    ModelConfig model;

    /// Model with T = 3, K = 7, 128x128 images and 64-wide layers.
    static TrainConfig full_scale();
    /// Short schedule and narrow layers for single-core runs on 32x32 sprites.
    static TrainConfig desk_scale();

    std::size_t checkpoint_interval() const;
    /// Copies derived fields (slot input width = encoder width) and validates.
    void finalize();
    void validate() const;
};

TrainConfig preset_config(const std::string& name);  // "full" | "desk"

/// Linear warmup from 0 to lr, then lr * 0.5^((step - warmup) / decay_steps).
double lr_at(std::size_t step, const TrainConfig& config);

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys();
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& config, const std::string& key);

/// Lines of `key = value`; '#' starts a comment. Unknown keys are errors.
void apply_config_text(TrainConfig& config, const std::string& text, const std::string& origin = "<text>");
void apply_config_file(TrainConfig& config, const std::filesystem::path& path);

/// Canonical `key=value` lines for every key in registry order, except
/// train.out_dir: a run copied to another directory still resumes and its
/// checkpoints do not depend on where they were written.
std::string config_echo(const TrainConfig& config);
/// One-line description of the lr and sigma schedules for run headers.
std::string schedule_description(const TrainConfig& config);

}  // namespace boqsa
