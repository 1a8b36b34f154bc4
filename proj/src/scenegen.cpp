#include "boqsa/scenegen.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "boqsa/png_io.hpp"
#include "boqsa/random.hpp"

namespace boqsa {

std::vector<Rgb8> SceneConfig::default_palette() {
    return {{230, 25, 25}, {25, 200, 40}, {30, 60, 235}, {245, 220, 20},
            {220, 30, 220}, {20, 215, 220}, {250, 130, 10}, {245, 245, 245}};
}

void SceneConfig::validate() const {
    if (image_size < 4) throw std::invalid_argument("scene image_size must be >= 4");
    if (min_sprites < 1 || min_sprites > max_sprites) throw std::invalid_argument("scene sprite range is empty");
    if (max_sprites > 255) throw std::invalid_argument("at most 255 sprites per scene");
    if (min_sprite_size < 2 || min_sprite_size > max_sprite_size || max_sprite_size > image_size) {
        throw std::invalid_argument("scene sprite size range does not fit the image");
    }
    if (shapes.empty()) throw std::invalid_argument("scene needs at least one shape");
    if (palette.size() < max_sprites) throw std::invalid_argument("palette needs at least max_sprites colors");
}

SceneConfig scene_preset(const std::string& name) {
    SceneConfig config;
    config.name = name;
    if (name == "sprites2") {
        config.min_sprites = 2;
        config.max_sprites = 2;
    } else if (name == "sprites4") {
        config.min_sprites = 2;
        config.max_sprites = 4;
    } else {
        throw std::invalid_argument("unknown scene preset '" + name + "' (expected sprites2|sprites4)");
    }
    return config;
}

std::size_t preset_slot_count(const std::string& name) {
    return scene_preset(name).max_sprites + 1;
}

std::vector<std::uint8_t> SceneSample::instance_mask(std::size_t instance) const {
    std::vector<std::uint8_t> mask(pixels());
    const auto id = static_cast<std::uint8_t>(instance + 1);
    for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = labels[p] == id;
    return mask;
}

std::vector<std::vector<std::uint8_t>> SceneSample::instance_masks() const {
    std::vector<std::vector<std::uint8_t>> masks;
    for (std::size_t i = 0; i < num_instances; ++i) masks.push_back(instance_mask(i));
    return masks;
}

std::vector<std::uint8_t> SceneSample::background_mask() const {
    std::vector<std::uint8_t> mask(pixels());
    for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = labels[p] == 0;
    return mask;
}

template <typename T>
Tensor<T> SceneSample::image() const {
    const std::size_t n = pixels();
    std::vector<T> data(3 * n);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < 3; ++c) data[c * n + p] = static_cast<T>(rgb[p * 3 + c]) / T{255};
    return Tensor<T>::from_data({3, size, size}, std::move(data));
}

template <typename T>
Tensor<T> Dataset::batch(const std::vector<std::size_t>& indices) const {
    const std::size_t s = config.image_size, n = s * s;
    std::vector<T> data(indices.size() * 3 * n);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const SceneSample& sample = samples.at(indices[b]);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t c = 0; c < 3; ++c)
                data[(b * 3 + c) * n + p] = static_cast<T>(sample.rgb[p * 3 + c]) / T{255};
    }
    return Tensor<T>::from_data({indices.size(), 3, s, s}, std::move(data));
}

namespace {

struct Sprite {
    SpriteShape shape;
    std::int64_t x0, y0, extent;
};

// Coverage test at the centre of pixel (x, y), all in half-pixel units.
bool covers(const Sprite& s, std::int64_t x, std::int64_t y) {
    if (x < s.x0 || y < s.y0 || x >= s.x0 + s.extent || y >= s.y0 + s.extent) return false;
    const std::int64_t px = 2 * x + 1, py = 2 * y + 1;
    const std::int64_t cx = 2 * s.x0 + s.extent, cy = 2 * s.y0 + s.extent;
    switch (s.shape) {
        case SpriteShape::square: return true;
        case SpriteShape::circle: return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= s.extent * s.extent;
        case SpriteShape::triangle:
            // apex at the top centre, base along the bottom edge
            return 2 * std::abs(px - cx) <= py - 2 * s.y0;
    }
    return false;
}

bool try_compose(const SceneConfig& config, Rng& rng, SceneSample& out) {
    const auto size = static_cast<std::int64_t>(config.image_size);
    const std::size_t count = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(config.min_sprites), static_cast<std::int64_t>(config.max_sprites)));

    // Dark background so no sprite color can coincide with it.
    const Rgb8 background{static_cast<std::uint8_t>(rng.below(90)), static_cast<std::uint8_t>(rng.below(90)),
                          static_cast<std::uint8_t>(rng.below(90))};
    // Distinct colors per scene: partial Fisher-Yates over the palette.
    std::vector<std::size_t> colors(config.palette.size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = i;
    for (std::size_t i = 0; i < count; ++i) std::swap(colors[i], colors[i + rng.below(colors.size() - i)]);

    std::vector<std::uint8_t> labels(config.image_size * config.image_size, 0);
    for (std::size_t k = 0; k < count; ++k) {
        Sprite s;
        s.shape = config.shapes[rng.below(config.shapes.size())];
        s.extent = rng.between(static_cast<std::int64_t>(config.min_sprite_size),
                               static_cast<std::int64_t>(config.max_sprite_size));
        s.x0 = rng.between(0, size - s.extent);
        s.y0 = rng.between(0, size - s.extent);
        const auto id = static_cast<std::uint8_t>(k + 1);
        for (std::int64_t y = s.y0; y < s.y0 + s.extent; ++y) {
            for (std::int64_t x = s.x0; x < s.x0 + s.extent; ++x) {
                if (!covers(s, x, y)) continue;
                auto& cell = labels[static_cast<std::size_t>(y * size + x)];
                if (cell != 0 && !config.allow_overlap) return false;
                cell = id;  // later sprites occlude earlier ones
            }
        }
    }
    std::vector<std::size_t> visible(count + 1, 0);
    for (auto l : labels) ++visible[l];
    for (std::size_t k = 1; k <= count; ++k) {
        if (visible[k] < config.min_visible_pixels) return false;
    }

    out.size = config.image_size;
    out.num_instances = count;
    out.labels = std::move(labels);
    out.rgb.assign(out.labels.size() * 3, 0);
    for (std::size_t p = 0; p < out.labels.size(); ++p) {
        const Rgb8 c = out.labels[p] == 0 ? background : config.palette[colors[out.labels[p] - 1]];
        out.rgb[p * 3 + 0] = c.r;
        out.rgb[p * 3 + 1] = c.g;
        out.rgb[p * 3 + 2] = c.b;
    }
    return true;
}

std::string manifest_path_string(const std::filesystem::path& dir) { return (dir / "manifest").string(); }

std::string sample_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05zu.png", index);
    return buf;
}

std::string shape_name(SpriteShape s) {
    switch (s) {
        case SpriteShape::circle: return "circle";
        case SpriteShape::square: return "square";
        case SpriteShape::triangle: return "triangle";
    }
    return "?";
}

SpriteShape parse_shape(const std::string& text) {
    if (text == "circle") return SpriteShape::circle;
    if (text == "square") return SpriteShape::square;
    if (text == "triangle") return SpriteShape::triangle;
    throw IoError("unknown sprite shape '" + text + "'");
}

}  // namespace

SceneSample generate_sample(const SceneConfig& config, std::size_t index) {
    config.validate();
    Rng rng(mix_seed(config.seed, index));
    SceneSample sample;
    for (std::size_t attempt = 0; attempt < config.max_attempts; ++attempt) {
        if (try_compose(config, rng, sample)) return sample;
    }
    throw GenerationError(index, "no valid sprite placement after " + std::to_string(config.max_attempts) + " attempts");
}

Dataset generate(const SceneConfig& config, std::size_t count, std::size_t threads) {
    if (count < 1) throw std::invalid_argument("generate needs count >= 1");
    config.validate();
    Dataset dataset{config, std::vector<SceneSample>(count)};
    threads = std::clamp<std::size_t>(threads, 1, count);
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) dataset.samples[i] = generate_sample(config, i);
        return dataset;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < count; i += threads) dataset.samples[i] = generate_sample(config, i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const SceneConfig& c = dataset.config;
    std::ofstream manifest(manifest_path_string(dir));
    if (!manifest) throw IoError("cannot write " + manifest_path_string(dir));
    manifest << "format=boqsa-scenes\n"
             << "version=1\n"
             << "name=" << c.name << "\n"
             << "count=" << dataset.samples.size() << "\n"
             << "image_size=" << c.image_size << "\n"
             << "min_sprites=" << c.min_sprites << "\n"
             << "max_sprites=" << c.max_sprites << "\n"
             << "min_sprite_size=" << c.min_sprite_size << "\n"
             << "max_sprite_size=" << c.max_sprite_size << "\n"
             << "min_visible_pixels=" << c.min_visible_pixels << "\n"
             << "allow_overlap=" << (c.allow_overlap ? 1 : 0) << "\n"
             << "seed=" << c.seed << "\n"
             << "max_attempts=" << c.max_attempts << "\n";
    manifest << "shapes=";
    for (std::size_t i = 0; i < c.shapes.size(); ++i) manifest << (i ? "," : "") << shape_name(c.shapes[i]);
    manifest << "\npalette=";
    for (std::size_t i = 0; i < c.palette.size(); ++i) {
        manifest << (i ? ";" : "") << int(c.palette[i].r) << ',' << int(c.palette[i].g) << ',' << int(c.palette[i].b);
    }
    manifest << "\n";
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const SceneSample& s = dataset.samples[i];
        write_png(dir / "images" / sample_name(i), Image8{s.size, s.size, 3, s.rgb});
        write_png(dir / "masks" / sample_name(i), Image8{s.size, s.size, 1, s.labels});
    }
    if (!manifest) throw IoError("cannot write " + manifest_path_string(dir));
}

Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path_string(dir));
    if (!in) throw IoError("missing manifest " + manifest_path_string(dir));
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (line.empty() || eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError("manifest " + manifest_path_string(dir) + " lacks key '" + key + "'");
        return it->second;
    };
    if (get("format") != "boqsa-scenes") throw IoError("not a scene manifest: " + manifest_path_string(dir));
    const auto num = [&](const std::string& key) -> std::size_t {
        try {
            return std::stoull(get(key));
        } catch (const std::logic_error&) {
            throw IoError("manifest " + manifest_path_string(dir) + " has a malformed '" + key + "'");
        }
    };

    Dataset dataset;
    SceneConfig& c = dataset.config;
    c.name = get("name");
    c.image_size = num("image_size");
    c.min_sprites = num("min_sprites");
    c.max_sprites = num("max_sprites");
    c.min_sprite_size = num("min_sprite_size");
    c.max_sprite_size = num("max_sprite_size");
    c.min_visible_pixels = num("min_visible_pixels");
    c.allow_overlap = num("allow_overlap") != 0;
    c.seed = num("seed");
    c.max_attempts = num("max_attempts");
    c.shapes.clear();
    {
        std::stringstream ss(get("shapes"));
        std::string item;
        while (std::getline(ss, item, ',')) c.shapes.push_back(parse_shape(item));
    }
    c.palette.clear();
    {
        std::stringstream ss(get("palette"));
        std::string item;
        while (std::getline(ss, item, ';')) {
            unsigned r = 0, g = 0, b = 0;
            if (std::sscanf(item.c_str(), "%u,%u,%u", &r, &g, &b) != 3) throw IoError("malformed palette entry '" + item + "'");
            c.palette.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
        }
    }

    const std::size_t count = num("count");
    std::size_t on_disk = 0;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir / "images", ec)) on_disk += entry.path().extension() == ".png";
    if (ec) throw IoError("cannot list " + (dir / "images").string() + ": " + ec.message());
    if (on_disk != count) {
        throw IoError("manifest lists " + std::to_string(count) + " samples but " + (dir / "images").string() + " holds " +
                      std::to_string(on_disk));
    }
    dataset.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Image8 image = read_png(dir / "images" / sample_name(i), 3);
        const Image8 mask = read_png(dir / "masks" / sample_name(i), 1);
        if (image.width != c.image_size || image.height != c.image_size || mask.width != c.image_size ||
            mask.height != c.image_size) {
            throw IoError("sample " + sample_name(i) + " in " + dir.string() + " has the wrong size");
        }
        SceneSample& s = dataset.samples[i];
        s.size = c.image_size;
        s.rgb = image.pixels;
        s.labels = mask.pixels;
        s.num_instances = *std::max_element(s.labels.begin(), s.labels.end());
    }
    return dataset;
}

std::string dataset_hash(const Dataset& dataset) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    const auto feed_u64 = [&](std::uint64_t v) {
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
        EVP_DigestUpdate(ctx, bytes, 8);
    };
    feed_u64(dataset.config.image_size);
    feed_u64(dataset.samples.size());
    for (const auto& s : dataset.samples) {
        feed_u64(s.num_instances);
        EVP_DigestUpdate(ctx, s.rgb.data(), s.rgb.size());
        EVP_DigestUpdate(ctx, s.labels.data(), s.labels.size());
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

template Tensor<float> SceneSample::image<float>() const;
template Tensor<double> SceneSample::image<double>() const;
template Tensor<float> Dataset::batch<float>(const std::vector<std::size_t>&) const;
template Tensor<double> Dataset::batch<double>(const std::vector<std::size_t>&) const;

}  // namespace boqsa
