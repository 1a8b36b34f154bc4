#include "boqsa/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "boqsa/ops.hpp"

namespace boqsa {

namespace fs = std::filesystem;

fs::path checkpoint_path(const fs::path& run_dir, std::size_t step) {
    char name[48];
    std::snprintf(name, sizeof(name), "step_%07zu.bqsa", step);
    return run_dir / name;
}

fs::path final_checkpoint_path(const fs::path& run_dir) { return run_dir / "final.bqsa"; }

std::uint64_t step_seed(std::uint64_t run_seed, std::size_t step) { return mix_seed(mix_seed(run_seed, 0x7472), step); }

Checkpoint make_checkpoint(const Model<Real>& model, const Adam<Real>* adam, std::size_t step, const TrainConfig& config) {
    Checkpoint ckpt;
    ckpt.step = step;
    ckpt.config_echo = config_echo(config);
    store_tensors(ckpt, model.parameters());
    if (adam) adam->save_state(ckpt);
    return ckpt;
}

TrainConfig config_from_checkpoint(const Checkpoint& checkpoint) {
    TrainConfig config;
    apply_config_text(config, checkpoint.config_echo, "checkpoint config");
    config.finalize();
    return config;
}

Model<Real> model_from_checkpoint(const Checkpoint& checkpoint) {
    const TrainConfig config = config_from_checkpoint(checkpoint);
    Model<Real> model(config.model, config.seed);
    auto params = model.parameters();
    restore_tensors(checkpoint, params);
    return model;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_dataset_fits(const ModelConfig& model, const Dataset& data) {
    if (data.size() == 0) throw ConfigError("dataset is empty");
    if (data.image_size() != model.image_size) {
        throw ConfigError("dataset images are " + std::to_string(data.image_size()) + "px but the model expects " +
                          std::to_string(model.image_size) + "px");
    }
}

class StepLog {
public:
    StepLog(const TrainConfig& config, const TrainOptions& options) : mirror_(options.log) {
        if (options.write_files) {
            fs::create_directories(config.out_dir);
            file_.open(fs::path(config.out_dir) / "train.log", options.resume ? std::ios::app : std::ios::trunc);
            if (!file_) throw IoError("cannot write " + (fs::path(config.out_dir) / "train.log").string());
        }
    }
    void line(const std::string& text) {
        if (file_.is_open()) file_ << text << '\n' << std::flush;
        if (mirror_) *mirror_ << text << '\n' << std::flush;
    }

private:
    std::ofstream file_;
    std::ostream* mirror_;
};

std::string format_step(std::size_t step, double loss, double lr, double sigma, double wall) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "step=%zu loss=%.8f lr=%.6e sigma=%.6f wall=%.3f", step, loss, lr, sigma, wall);
    return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config_in, const Dataset& data, const TrainOptions& options) {
    TrainConfig config = config_in;
    config.finalize();
    check_dataset_fits(config.model, data);
    if (data.config.max_sprites + 1 > config.model.slots.num_slots) {
        throw ConfigError("scenes hold up to " + std::to_string(data.config.max_sprites) + " sprites; K = " +
                          std::to_string(config.model.slots.num_slots) + " leaves no background slot");
    }

    Model<Real> model(config.model, config.seed);
    Adam<Real> adam(model.parameters());
    TrainResult result;
    if (options.resume) {
        const Checkpoint ckpt = load_checkpoint(*options.resume);
        if (ckpt.config_echo != config_echo(config)) {
            throw ConfigError("checkpoint " + options.resume->string() + " was written by a different config");
        }
        auto params = model.parameters();
        restore_tensors(ckpt, params);
        adam.load_state(ckpt);
        result.start_step = static_cast<std::size_t>(ckpt.step);
    }

    const fs::path run_dir = config.out_dir;
    StepLog log(config, options);
    log.line("# run seed=" + std::to_string(config.seed) + " init=" + to_string(config.model.slots.init) +
             " regime=" + to_string(config.model.slots.regime) + " start_step=" + std::to_string(result.start_step));
    log.line("# " + schedule_description(config));
    if (config.grad_clip > 0.0) log.line("# grad clip: global norm " + std::to_string(config.grad_clip));

    const std::size_t end = std::min(config.max_steps, options.stop_after.value_or(config.max_steps));
    const std::size_t interval = config.checkpoint_interval();
    const auto save = [&](std::size_t step, const fs::path& path) {
        if (!options.write_files) return;
        save_checkpoint(make_checkpoint(model, &adam, step, config), path);
        result.last_checkpoint = path;
    };

    const auto start = Clock::now();
    std::vector<std::size_t> batch(config.batch_size);
    for (std::size_t step = result.start_step; step < end; ++step) {
        Rng rng(step_seed(config.seed, step));
        for (auto& i : batch) i = static_cast<std::size_t>(rng.below(data.size()));
        const Tensor<Real> images = data.batch<Real>(batch);

        const auto abort = [&](const std::string& why) {
            const fs::path path = run_dir / ("abort_step_" + std::to_string(step) + ".bqsa");
            save(step, path);
            log.line("# aborted: " + why);
            throw TrainingAborted(step, options.write_files ? path : fs::path{}, why);
        };

        model.zero_grad();
        std::optional<ModelOutput<Real>> out;
        try {
            out.emplace(model.forward(images, step, rng));
        } catch (const NumericError& e) {
            abort(std::string(e.what()) + " at step " + std::to_string(step));
        }
        const double loss = out->loss.item();
        const double lr = lr_at(step, config);
        const double sigma = sigma_at(step, config.model.slots.sigma_steps);
        if (!std::isfinite(loss)) abort("non-finite loss at step " + std::to_string(step));
        backward(out->loss);
        if (config.grad_clip > 0.0) adam.clip_grad_norm(config.grad_clip);
        adam.step(lr);
        result.losses.push_back(loss);

        const std::size_t done = step + 1;
        if (done % config.log_every == 0 || done == end || step == result.start_step) {
            log.line(format_step(step, loss, lr, sigma, seconds_since(start)));
        }
        if (done % interval == 0 && done != config.max_steps) save(done, checkpoint_path(run_dir, done));
    }
    result.end_step = std::max(end, result.start_step);
    result.wall_seconds = seconds_since(start);
    if (result.end_step == config.max_steps) {
        save(result.end_step, final_checkpoint_path(run_dir));
    } else if (result.end_step % interval != 0) {
        save(result.end_step, checkpoint_path(run_dir, result.end_step));
    }
    log.line("# done steps=" + std::to_string(result.end_step) + " wall_seconds=" + std::to_string(result.wall_seconds));
    return result;
}

namespace {

ImageMetrics score_image(const SceneSample& sample, std::size_t index, const Labels& pred, std::size_t num_slots,
                         std::span<const Real> recon, std::span<const Real> image) {
    ImageMetrics row;
    row.index = index;
    row.num_instances = sample.num_instances;
    const Labels gt = to_labels(sample.labels);
    row.ari_fg = ari_fg(pred, gt);
    if (const auto cover = msc_fg(pred, gt)) {
        row.msc_fg = cover->weighted;
        row.msc_fg_unweighted = cover->unweighted;
    }
    std::vector<std::uint8_t> foreground(sample.pixels());
    for (std::size_t p = 0; p < foreground.size(); ++p) foreground[p] = sample.labels[p] != 0;
    if (const auto fg = fg_extraction(pred, num_slots, foreground)) {
        row.iou = fg->iou;
        row.dice = fg->dice;
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        const double d = static_cast<double>(recon[i]) - static_cast<double>(image[i]);
        sq += d * d;
    }
    row.mse_per_pixel = sq / static_cast<double>(recon.size());
    row.mse_slate_total = row.mse_per_pixel * static_cast<double>(sample.pixels());
    return row;
}

}  // namespace

MetricReport evaluate(const Model<Real>& model, const Dataset& data, const EvalOptions& options) {
    check_dataset_fits(model.config(), data);
    if (options.batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
    if (options.iterations && *options.iterations < 1) throw ConfigError("iteration override must be >= 1");

    MetricReport report;
    report.tag = options.tag;
    report.rows.resize(data.size());
    const std::size_t num_batches = (data.size() + options.batch_size - 1) / options.batch_size;
    const std::size_t k = model.config().slots.num_slots;

    const auto run_batch = [&](std::size_t b) {
        NoGradGuard no_grad;
        std::vector<std::size_t> indices;
        for (std::size_t i = b * options.batch_size; i < std::min(data.size(), (b + 1) * options.batch_size); ++i) {
            indices.push_back(i);
        }
        const Tensor<Real> images = data.batch<Real>(indices);
        Rng rng(mix_seed(options.seed, b));
        const ModelOutput<Real> out = model.forward(images, std::nullopt, rng, options.iterations);
        const std::size_t per_image = 3 * data.image_size() * data.image_size();
        for (std::size_t j = 0; j < indices.size(); ++j) {
            const Labels pred = argmax_labels(out.decoded.masks, j);
            report.rows[indices[j]] = score_image(data.samples[indices[j]], indices[j], pred, k,
                                                  out.decoded.recon.data().subspan(j * per_image, per_image),
                                                  images.data().subspan(j * per_image, per_image));
        }
    };

    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, num_batches);
    if (threads == 1) {
        for (std::size_t b = 0; b < num_batches; ++b) run_batch(b);
        return report;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                try {
                    for (std::size_t b = t; b < num_batches; b += threads) run_batch(b);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return report;
}

MetricReport transfer(const Model<Real>& model, const std::string& source_name, const Dataset& target,
                      EvalOptions options) {
    options.tag = source_name + "→" + target.config.name;
    return evaluate(model, target, options);
}

std::vector<MetricReport> sweep_iterations(const Model<Real>& model, const Dataset& data, std::size_t max_iterations,
                                           EvalOptions options) {
    if (max_iterations < 1) throw ConfigError("sweep needs at least one iteration count");
    std::vector<MetricReport> reports;
    for (std::size_t t = 1; t <= max_iterations; ++t) {
        options.iterations = t;
        options.tag = "T=" + std::to_string(t);
        reports.push_back(evaluate(model, data, options));
    }
    return reports;
}

Rgb8 render_slot_color(std::size_t slot) {
    static const Rgb8 colors[] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
                                  {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
                                  {0, 128, 128},  {220, 190, 255}};
    return colors[slot % std::size(colors)];
}

std::vector<RenderedSample> render(const Model<Real>& model, const Dataset& data, const fs::path& out_dir,
                                   const RenderOptions& options) {
    check_dataset_fits(model.config(), data);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const std::size_t count = std::min(options.count, data.size());
    const std::size_t h = data.image_size(), w = h, k = model.config().slots.num_slots, n = h * w;
    std::vector<RenderedSample> rendered;
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor<Real> image = data.batch<Real>({i});
        Rng rng(mix_seed(options.seed, i));
        const ModelOutput<Real> out = model.forward(image, std::nullopt, rng, options.iterations);
        const Labels pred = argmax_labels(out.decoded.masks, 0);
        const SceneSample& sample = data.samples[i];

        RenderedSample r;
        r.background_slot = max_intersection_slot(pred, k, sample.background_mask());
        r.image = Image8{w * (k + 2), h, 3, std::vector<std::uint8_t>(w * (k + 2) * h * 3)};
        const auto set = [&](std::size_t panel, std::size_t p, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
            const std::size_t y = p / w, x = p % w;
            std::uint8_t* px = &r.image.pixels[(y * r.image.width + panel * w + x) * 3];
            px[0] = red;
            px[1] = green;
            px[2] = blue;
        };
        const auto to_byte = [](Real v) {
            return static_cast<std::uint8_t>(std::lround(std::clamp<double>(v, 0.0, 1.0) * 255.0));
        };
        const auto recon = out.decoded.recon.data();
        for (std::size_t p = 0; p < n; ++p) {
            set(0, p, sample.rgb[p * 3], sample.rgb[p * 3 + 1], sample.rgb[p * 3 + 2]);
            set(1, p, to_byte(recon[p]), to_byte(recon[n + p]), to_byte(recon[2 * n + p]));
            for (std::size_t s = 0; s < k; ++s) {
                Rgb8 c = kRenderUnassigned;
                if (pred[p] == static_cast<int>(s)) c = s == r.background_slot ? Rgb8{0, 0, 0} : render_slot_color(s);
                set(2 + s, p, c.r, c.g, c.b);
            }
        }
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu.png", i);
        r.path = out_dir / name;
        write_png(r.path, r.image);
        rendered.push_back(std::move(r));
    }
    return rendered;
}

}  // namespace boqsa
