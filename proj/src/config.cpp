#include "boqsa/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace boqsa {

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.model.image_size = 128;
    c.model.encoder.first_stride = 2;
    c.model.slots.num_slots = 8;
    c.model.slots.sigma_steps = 30000;
    c.checkpoint_every = 0;
    c.log_every = 100;
    c.finalize();
    return c;
}

TrainConfig TrainConfig::desk_scale() {
    TrainConfig c;
    c.batch_size = 16;
    c.lr = 4e-4;
    c.warmup_steps = 200;
    c.decay_steps = 2000;
    c.max_steps = 8000;
    c.log_every = 50;
    c.model.image_size = 32;
    c.model.encoder.channels = 32;
    c.model.encoder.first_stride = 2;
    c.model.slots.num_slots = 5;
    c.model.slots.slot_dim = 64;
    c.model.slots.mlp_hidden = 128;
    c.model.slots.sigma_steps = 1000;
    c.model.decoder.channels = 16;
    c.model.decoder.upsample_layers = 4;
    c.model.decoder.hidden_layers = 4;
    c.finalize();
    return c;
}

TrainConfig preset_config(const std::string& name) {
    if (name == "full") return TrainConfig::full_scale();
    if (name == "desk") return TrainConfig::desk_scale();
    throw ConfigError("unknown preset '" + name + "' (expected full|desk)");
}

std::size_t TrainConfig::checkpoint_interval() const {
    if (checkpoint_every > 0) return checkpoint_every;
    return std::max<std::size_t>(1, max_steps / 10);
}

void TrainConfig::finalize() {
    model.slots.input_dim = model.encoder.channels;
    validate();
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
    if (decay_steps < 1) throw ConfigError("train.decay_steps must be >= 1");
    if (warmup_steps > max_steps) throw ConfigError("train.warmup_steps must not exceed train.max_steps");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
    if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
    try {
        model.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

double lr_at(std::size_t step, const TrainConfig& config) {
    const auto s = static_cast<double>(step);
    const auto warmup = static_cast<double>(config.warmup_steps);
    if (step < config.warmup_steps) return config.lr * s / warmup;
    return config.lr * std::pow(0.5, (s - warmup) / static_cast<double>(config.decay_steps));
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long out = 0;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::logic_error&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(out);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::logic_error&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename Field>
ConfigKey size_key(std::string name, std::string help, Field field) {
    return {name, std::move(help), [field](const TrainConfig& c) { return std::to_string(field(c)); },
            [field, name](TrainConfig& c, const std::string& v) { field(c) = parse_size(name, v); }};
}

template <typename Field>
ConfigKey double_key(std::string name, std::string help, Field field) {
    return {name, std::move(help), [field](const TrainConfig& c) { return fmt_double(field(c)); },
            [field, name](TrainConfig& c, const std::string& v) { field(c) = parse_double(name, v); }};
}

template <typename Field>
ConfigKey bool_key(std::string name, std::string help, Field field) {
    return {name, std::move(help),
            [field](const TrainConfig& c) { return std::string(field(c) ? "true" : "false"); },
            [field, name](TrainConfig& c, const std::string& v) { field(c) = parse_bool(name, v); }};
}

template <typename Field>
ConfigKey string_key(std::string name, std::string help, Field field) {
    return {name, std::move(help), [field](const TrainConfig& c) { return field(c); },
            [field](TrainConfig& c, const std::string& v) { field(c) = v; }};
}

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> k;
    k.push_back(size_key("train.batch_size", "images per step", [](auto& c) -> auto& { return c.batch_size; }));
    k.push_back(double_key("train.lr", "peak learning rate", [](auto& c) -> auto& { return c.lr; }));
    k.push_back(size_key("train.warmup_steps", "linear warmup length", [](auto& c) -> auto& { return c.warmup_steps; }));
    k.push_back(size_key("train.decay_steps", "half-life of the lr decay", [](auto& c) -> auto& { return c.decay_steps; }));
    k.push_back(size_key("train.max_steps", "total optimizer steps", [](auto& c) -> auto& { return c.max_steps; }));
    k.push_back({"train.seed", "run seed",
                 [](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, const std::string& v) { c.seed = parse_size("train.seed", v); }});
    k.push_back(double_key("train.grad_clip", "global gradient-norm clip (0 = off)", [](auto& c) -> auto& { return c.grad_clip; }));
    k.push_back(size_key("train.checkpoint_every", "checkpoint interval (0 = max_steps/10)",
                         [](auto& c) -> auto& { return c.checkpoint_every; }));
    k.push_back(size_key("train.log_every", "log interval in steps", [](auto& c) -> auto& { return c.log_every; }));
    k.push_back(string_key("train.dataset", "training dataset directory", [](auto& c) -> auto& { return c.dataset; }));
    k.push_back(string_key("train.out_dir", "run output directory", [](auto& c) -> auto& { return c.out_dir; }));

    k.push_back(size_key("model.image_size", "square image extent", [](auto& c) -> auto& { return c.model.image_size; }));
    k.push_back(size_key("encoder.channels", "encoder width (= slot input width)",
                         [](auto& c) -> auto& { return c.model.encoder.channels; }));
    k.push_back(size_key("encoder.layers", "conv layers", [](auto& c) -> auto& { return c.model.encoder.layers; }));
    k.push_back(size_key("encoder.kernel", "conv kernel", [](auto& c) -> auto& { return c.model.encoder.kernel; }));
    k.push_back(size_key("encoder.padding", "conv padding", [](auto& c) -> auto& { return c.model.encoder.padding; }));
    k.push_back(size_key("encoder.first_stride", "stride of the first conv",
                         [](auto& c) -> auto& { return c.model.encoder.first_stride; }));
    k.push_back(bool_key("encoder.feature_mlp", "layernorm + MLP on features",
                         [](auto& c) -> auto& { return c.model.encoder.feature_mlp; }));

    k.push_back(size_key("slots.num_slots", "K", [](auto& c) -> auto& { return c.model.slots.num_slots; }));
    k.push_back(size_key("slots.slot_dim", "D", [](auto& c) -> auto& { return c.model.slots.slot_dim; }));
    k.push_back(size_key("slots.mlp_hidden", "slot MLP hidden width", [](auto& c) -> auto& { return c.model.slots.mlp_hidden; }));
    k.push_back(size_key("slots.iterations", "attention steps T", [](auto& c) -> auto& { return c.model.slots.iterations; }));
    k.push_back(double_key("slots.eps", "attention normalization epsilon", [](auto& c) -> auto& { return c.model.slots.eps; }));
    k.push_back({"slots.init", "gaussian | query",
                 [](const TrainConfig& c) { return to_string(c.model.slots.init); },
                 [](TrainConfig& c, const std::string& v) {
                     try {
                         c.model.slots.init = parse_init_kind(v);
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("slots.init: ") + e.what());
                     }
                 }});
    k.push_back({"slots.regime", "full | detached | bilevel",
                 [](const TrainConfig& c) { return to_string(c.model.slots.regime); },
                 [](TrainConfig& c, const std::string& v) {
                     try {
                         c.model.slots.regime = parse_gradient_regime(v);
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("slots.regime: ") + e.what());
                     }
                 }});
    k.push_back(size_key("slots.sigma_steps", "query perturbation annealing steps",
                         [](auto& c) -> auto& { return c.model.slots.sigma_steps; }));
    k.push_back(bool_key("slots.bypass_layernorm", "skip slot/input layernorms",
                         [](auto& c) -> auto& { return c.model.slots.bypass_layernorm; }));

    k.push_back(size_key("decoder.channels", "decoder width", [](auto& c) -> auto& { return c.model.decoder.channels; }));
    k.push_back(size_key("decoder.hidden_layers", "hidden transposed convs",
                         [](auto& c) -> auto& { return c.model.decoder.hidden_layers; }));
    k.push_back(size_key("decoder.upsample_layers", "stride-2 layers (grid = image >> n)",
                         [](auto& c) -> auto& { return c.model.decoder.upsample_layers; }));
    k.push_back(size_key("decoder.kernel", "hidden kernel", [](auto& c) -> auto& { return c.model.decoder.kernel; }));
    k.push_back(size_key("decoder.final_kernel", "output kernel", [](auto& c) -> auto& { return c.model.decoder.final_kernel; }));
    return k;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

namespace {

const ConfigKey& find_key(const std::string& key) {
    for (const auto& k : config_keys()) {
        if (k.name == key) return k;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
    find_key(key).set(config, value);
}

std::string get_config_value(const TrainConfig& config, const std::string& key) { return find_key(key).get(config); }

void apply_config_text(TrainConfig& config, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void apply_config_file(TrainConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    apply_config_text(config, text.str(), path.string());
}

std::string config_echo(const TrainConfig& config) {
    std::string out;
    for (const auto& k : config_keys()) {
        if (k.name != "train.out_dir") out += k.name + "=" + k.get(config) + "\n";
    }
    return out;
}

std::string schedule_description(const TrainConfig& config) {
    std::ostringstream os;
    os << "lr: linear warmup 0 -> " << config.lr << " over " << config.warmup_steps
       << " steps, then exponential decay lr * 0.5^((step - " << config.warmup_steps << ") / " << config.decay_steps
       << "); sigma: cosine 1 -> 0 over " << config.model.slots.sigma_steps << " steps";
    return os.str();
}

}  // namespace boqsa
