#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <iterator>
#include <sstream>

#include "boqsa/harness.hpp"

using namespace boqsa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("boqsa_harness_" + name)) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Narrow model on the 32x32 scenes; a step takes a few milliseconds.
TrainConfig tiny_config(const fs::path& out) {
    TrainConfig c = TrainConfig::desk_scale();
    c.batch_size = 4;
    c.warmup_steps = 2;
    c.decay_steps = 20;
    c.max_steps = 6;
    c.log_every = 1;
    c.model.encoder.channels = 8;
    c.model.encoder.layers = 2;
    c.model.slots.slot_dim = 12;
    c.model.slots.mlp_hidden = 16;
    c.model.slots.sigma_steps = 4;
    c.model.decoder.channels = 6;
    c.model.decoder.hidden_layers = 4;
    c.out_dir = out.string();
    c.finalize();
    return c;
}

const Dataset& scenes() {
    static const Dataset d = [] {
        SceneConfig c = scene_preset("sprites4");
        c.seed = 11;
        return generate(c, 200);
    }();
    return d;
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_summary(const MetricSummary& a, const MetricSummary& b) {
    return a.images == b.images && a.ari_fg.mean == b.ari_fg.mean && a.msc_fg.mean == b.msc_fg.mean &&
           a.iou.mean == b.iou.mean && a.dice.mean == b.dice.mean && a.mse_per_pixel.mean == b.mse_per_pixel.mean;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.lr = 4e-4;
    c.warmup_steps = 100;
    c.decay_steps = 1000;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(50, c) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(lr_at(100, c) == 4e-4);
    CHECK(lr_at(1100, c) == doctest::Approx(2e-4).epsilon(1e-14));
    CHECK(lr_at(2100, c) == doctest::Approx(1e-4).epsilon(1e-14));
    for (std::size_t s = 101; s < 5000; s += 7) CHECK(lr_at(s, c) <= lr_at(s - 1, c));
    for (std::size_t s = 1; s <= 100; ++s) CHECK(lr_at(s, c) >= lr_at(s - 1, c));
}

TEST_CASE("presets carry the documented training configuration") {
    const TrainConfig full = TrainConfig::full_scale();
    CHECK(full.batch_size == 128);
    CHECK(full.lr == 4e-4);
    CHECK(full.warmup_steps == 5000);
    CHECK(full.decay_steps == 50000);
    CHECK(full.max_steps == 250000);
    CHECK(full.model.slots.slot_dim == 64);
    CHECK(full.model.slots.mlp_hidden == 128);
    CHECK(full.model.slots.sigma_steps == 30000);

    const TrainConfig desk = TrainConfig::desk_scale();
    CHECK(desk.batch_size == 16);
    CHECK(desk.lr == 4e-4);
    CHECK(desk.warmup_steps == 200);
    CHECK(desk.decay_steps == 2000);
    CHECK(desk.max_steps == 8000);
    CHECK(desk.model.slots.sigma_steps == 1000);
    CHECK(desk.model.image_size == 32);
    CHECK(desk.model.slots.num_slots == preset_slot_count("sprites4"));
    CHECK(desk.checkpoint_interval() == 800);
    CHECK_THROWS_AS(preset_config("laptop"), ConfigError);
}

TEST_CASE("config text, overrides and echo") {
    TrainConfig c = TrainConfig::desk_scale();
    apply_config_text(c, "# comment\ntrain.lr = 1e-3   # trailing\n\nslots.regime=full\nencoder.feature_mlp = off\n");
    CHECK(c.lr == 1e-3);
    CHECK(c.model.slots.regime == GradientRegime::full_unroll);
    CHECK_FALSE(c.model.encoder.feature_mlp);

    set_config_value(c, "slots.num_slots", "7");
    CHECK(get_config_value(c, "slots.num_slots") == "7");
    CHECK_THROWS_AS(set_config_value(c, "slots.colour", "1"), ConfigError);
    CHECK_THROWS_AS(set_config_value(c, "train.batch_size", "-3"), ConfigError);
    CHECK_THROWS_AS(set_config_value(c, "train.batch_size", "12x"), ConfigError);
    CHECK_THROWS_AS(set_config_value(c, "train.lr", "fast"), ConfigError);
    CHECK_THROWS_AS(set_config_value(c, "slots.init", "uniform"), ConfigError);
    try {
        apply_config_text(c, "train.lr = 1\nbogus\n", "run.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
    }

    // The echo reproduces the config exactly, including doubles.
    c.lr = 0.1 + 0.2;
    TrainConfig back;
    apply_config_text(back, config_echo(c));
    CHECK(config_echo(back) == config_echo(c));
    CHECK(back.lr == c.lr);

    std::size_t keys = 0;
    std::istringstream echo(config_echo(c));
    for (std::string line; std::getline(echo, line);) ++keys;
    CHECK(keys + 1 == config_keys().size());  // all but train.out_dir

    TrainConfig bad = TrainConfig::desk_scale();
    bad.warmup_steps = bad.max_steps + 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig::desk_scale();
    bad.model.decoder.upsample_layers = 6;
    CHECK_THROWS_AS(bad.finalize(), ConfigError);
}

TEST_CASE("config file") {
    TempDir dir("cfg");
    fs::create_directories(dir.path);
    std::ofstream(dir.path / "run.cfg") << "train.max_steps = 77\n";
    TrainConfig c;
    apply_config_file(c, dir.path / "run.cfg");
    CHECK(c.max_steps == 77);
    CHECK_THROWS_AS(apply_config_file(c, dir.path / "missing.cfg"), ConfigError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    TempDir dir("ckpt");
    fs::create_directories(dir.path);
    Rng rng(1);
    Checkpoint ckpt;
    ckpt.step = 1234567890123ULL;
    ckpt.config_echo = "a=1\nb=two\n";
    NamedTensors<float> f{{"w", xavier_uniform<float>({3, 4}, 3, 4, rng)}, {"s", Tensor<float>::scalar(-0.0f)}};
    NamedTensors<double> d{{"x", xavier_uniform<double>({2, 1, 5}, 2, 5, rng)}};
    f[0].second.mutable_data()[0] = std::numeric_limits<float>::denorm_min();
    store_tensors(ckpt, f);
    store_tensors(ckpt, d, "dbl.");
    save_checkpoint(ckpt, dir.path / "c.bqsa");
    const Checkpoint back = load_checkpoint(dir.path / "c.bqsa");
    CHECK(back.step == ckpt.step);
    CHECK(back.config_echo == ckpt.config_echo);
    REQUIRE(back.tensors.size() == 3);
    CHECK(back.get("dbl.x").dtype == DType::f64);
    CHECK(back.get("dbl.x").shape == Shape{2, 1, 5});

    NamedTensors<float> f2{{"w", Tensor<float>::zeros({3, 4})}, {"s", Tensor<float>::zeros({})}};
    NamedTensors<double> d2{{"x", Tensor<double>::zeros({2, 1, 5})}};
    restore_tensors(back, f2);
    restore_tensors(back, d2, "dbl.");
    CHECK(std::memcmp(f2[0].second.data().data(), f[0].second.data().data(), 12 * sizeof(float)) == 0);
    CHECK(std::signbit(f2[1].second.item()));
    CHECK(std::memcmp(d2[0].second.data().data(), d[0].second.data().data(), 10 * sizeof(double)) == 0);

    // The header is the documented magic and little-endian version.
    const auto bytes = file_bytes(dir.path / "c.bqsa");
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "BQSA");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);

    NamedTensors<float> wrong{{"w", Tensor<float>::zeros({4, 3})}};
    CHECK_THROWS_AS(restore_tensors(back, wrong), ConfigError);
    NamedTensors<float> absent{{"nope", Tensor<float>::zeros({1})}};
    CHECK_THROWS_AS(restore_tensors(back, absent), ConfigError);
}

TEST_CASE("damaged checkpoints are rejected") {
    TempDir dir("badckpt");
    fs::create_directories(dir.path);
    Checkpoint ckpt;
    NamedTensors<float> f{{"w", Tensor<float>::full({8}, 1.5f)}};
    store_tensors(ckpt, f);
    save_checkpoint(ckpt, dir.path / "ok.bqsa");
    auto bytes = file_bytes(dir.path / "ok.bqsa");

    const auto write = [&](const std::string& name, const std::vector<char>& b) {
        std::ofstream(dir.path / name, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
        return dir.path / name;
    };
    CHECK_THROWS_AS(load_checkpoint(write("short.bqsa", {bytes.begin(), bytes.end() - 3})), IoError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(load_checkpoint(write("long.bqsa", extra)), IoError);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(load_checkpoint(write("magic.bqsa", magic)), IoError);
    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(load_checkpoint(write("version.bqsa", version)), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "absent.bqsa"), IoError);

    Checkpoint dup;
    store_tensors(dup, f);
    store_tensors(dup, f);
    CHECK_THROWS_AS(save_checkpoint(dup, dir.path / "dup.bqsa"), IoError);
}

TEST_CASE("adam first step and gradient clipping") {
    NamedTensors<double> params{{"w", Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true)}};
    Adam<double> adam(params);
    auto g = params[0].second.mutable_grad();
    g[0] = 0.3;
    g[1] = -4.0;
    g[2] = 0.0;
    adam.step(0.01);
    // Bias-corrected first step moves each weight by lr * g / (|g| + eps).
    CHECK(params[0].second.at(0) == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
    CHECK(params[0].second.at(1) == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK(params[0].second.at(2) == 0.5);
    CHECK(adam.steps() == 1);

    // Second step against the moment recurrences written out.
    g[0] = -0.1;
    const double m = 0.9 * 0.1 * 0.3 + 0.1 * -0.1, v = 0.999 * 0.001 * 0.09 + 0.001 * 0.01;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    const double before = params[0].second.at(0);
    adam.step(0.01);
    CHECK(params[0].second.at(0) == doctest::Approx(before - 0.01 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));

    g[0] = 3.0;
    g[1] = 4.0;
    g[2] = 0.0;
    CHECK(adam.clip_grad_norm(1.0) == doctest::Approx(5.0));
    CHECK(adam.grad_norm() == doctest::Approx(1.0));
    CHECK(adam.clip_grad_norm(10.0) == doctest::Approx(1.0));
    CHECK(params[0].second.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("training is byte-for-byte deterministic on one thread") {
    TempDir a("det_a"), b("det_b");
    const TrainResult ra = train(tiny_config(a.path), scenes());
    const TrainResult rb = train(tiny_config(b.path), scenes());
    CHECK(ra.losses == rb.losses);
    REQUIRE(fs::exists(final_checkpoint_path(a.path)));
    CHECK(file_bytes(final_checkpoint_path(a.path)) == file_bytes(final_checkpoint_path(b.path)));

    TrainConfig other = tiny_config(b.path);
    other.seed = 5;
    const TrainResult rc = train(other, scenes());
    CHECK(rc.losses != ra.losses);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    TempDir full("resume_full"), part("resume_part");
    TrainConfig c = tiny_config(full.path);
    c.max_steps = 10;
    c.checkpoint_every = 4;
    const TrainResult whole = train(c, scenes());
    REQUIRE(whole.losses.size() == 10);

    TrainConfig p = c;
    p.out_dir = part.path.string();
    TrainOptions first;
    first.stop_after = 4;
    const TrainResult head = train(p, scenes(), first);
    CHECK(head.end_step == 4);
    CHECK(head.last_checkpoint == checkpoint_path(part.path, 4));
    TrainOptions again;
    again.resume = head.last_checkpoint;
    const TrainResult tail = train(p, scenes(), again);
    CHECK(tail.start_step == 4);
    REQUIRE(tail.losses.size() == 6);
    CHECK(tail.losses.front() == whole.losses[4]);
    CHECK(tail.losses == std::vector<double>(whole.losses.begin() + 4, whole.losses.end()));
    CHECK(file_bytes(final_checkpoint_path(full.path)) == file_bytes(final_checkpoint_path(part.path)));

    // A different config cannot resume this run.
    TrainConfig changed = p;
    changed.lr = 1e-3;
    CHECK_THROWS_AS(train(changed, scenes(), again), ConfigError);
}

TEST_CASE("run directory layout and step log") {
    TempDir dir("layout");
    TrainConfig c = tiny_config(dir.path);
    c.max_steps = 10;
    train(c, scenes());
    for (std::size_t s = 1; s < 10; ++s) CHECK(fs::exists(checkpoint_path(dir.path, s)));
    CHECK(fs::exists(final_checkpoint_path(dir.path)));
    std::ifstream log(dir.path / "train.log");
    std::string text((std::istreambuf_iterator<char>(log)), std::istreambuf_iterator<char>());
    CHECK(text.find("exponential decay") != std::string::npos);
    CHECK(text.find("step=9 loss=") != std::string::npos);
    CHECK(text.find("sigma=") != std::string::npos);
    CHECK(text.find("# done steps=10") != std::string::npos);

    const Checkpoint ckpt = load_checkpoint(final_checkpoint_path(dir.path));
    CHECK(ckpt.step == 10);
    CHECK(config_echo(config_from_checkpoint(ckpt)) == config_echo(c));
    CHECK(ckpt.find("adam.m.encoder.conv0.weight") != nullptr);
}

TEST_CASE("desk-scale smoke: 50 steps lower the loss") {
    TrainConfig c = TrainConfig::desk_scale();
    c.max_steps = 50;
    c.warmup_steps = 10;
    TrainOptions o;
    o.write_files = false;
    const TrainResult r = train(c, scenes(), o);
    REQUIRE(r.losses.size() == 50);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        head += r.losses[i];
        tail += r.losses[40 + i];
    }
    CHECK(tail < head);
}

TEST_CASE("bi-level regime trains 500 steps without clipping") {
    TrainConfig c = TrainConfig::desk_scale();
    c.max_steps = 500;
    c.model.slots.regime = GradientRegime::bilevel_straight_through;
    c.model.slots.init = InitKind::learnable_query;
    REQUIRE(c.grad_clip == 0.0);
    TrainOptions o;
    o.write_files = false;
    const TrainResult r = train(c, scenes(), o);
    REQUIRE(r.losses.size() == 500);
    for (double l : r.losses) REQUIRE(std::isfinite(l));
}

TEST_CASE("a diverging run aborts with a checkpoint of the offending state") {
    TempDir dir("abort");
    TrainConfig c = tiny_config(dir.path);
    c.lr = 1e30;
    c.warmup_steps = 0;
    c.max_steps = 20;
    try {
        train(c, scenes());
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(e.step() > 0);
        CHECK(fs::exists(e.checkpoint()));
        CHECK(load_checkpoint(e.checkpoint()).step == e.step());
    }
}

TEST_CASE("training rejects datasets that do not fit the model") {
    TempDir dir("fit");
    TrainConfig c = tiny_config(dir.path);
    c.model.slots.num_slots = 4;  // sprites4 needs K >= 5
    CHECK_THROWS_AS(train(c, scenes()), ConfigError);
    SceneConfig small = scene_preset("sprites2");
    small.image_size = 16;
    small.max_sprite_size = 8;
    small.min_sprite_size = 4;
    TrainConfig d = tiny_config(dir.path);
    CHECK_THROWS_AS(train(d, generate(small, 4)), ConfigError);
    CHECK_THROWS_AS(evaluate(Model<Real>(d.model, 0), generate(small, 4)), ConfigError);
}

TEST_CASE("evaluation reports, sweeps and transfer") {
    const TrainConfig c = tiny_config("unused");
    const Model<Real> model(c.model, 3);
    EvalOptions o;
    o.batch_size = 32;
    const MetricReport report = evaluate(model, scenes(), o);
    REQUIRE(report.rows.size() == scenes().size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        CHECK(report.rows[i].index == i);
        CHECK(report.rows[i].num_instances == scenes().samples[i].num_instances);
        REQUIRE(report.rows[i].iou);
        CHECK(*report.rows[i].dice == doctest::Approx(2 * *report.rows[i].iou / (1 + *report.rows[i].iou)));
    }

    EvalOptions threaded = o;
    threaded.threads = 3;
    CHECK(same_summary(evaluate(model, scenes(), threaded).summary(), report.summary()));

    const MetricReport own = transfer(model, "sprites4", scenes(), o);
    CHECK(own.tag == "sprites4→sprites4");
    CHECK(same_summary(own.summary(), report.summary()));
    for (std::size_t i = 0; i < own.rows.size(); ++i) CHECK(own.rows[i].ari_fg == report.rows[i].ari_fg);

    const auto sweep = sweep_iterations(model, scenes(), 5, o);
    REQUIRE(sweep.size() == 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(sweep[t].tag == "T=" + std::to_string(t + 1));
        CHECK(sweep[t].rows.size() == scenes().size());
    }
    CHECK(same_summary(sweep[2].summary(), report.summary()));  // config T = 3

    SceneConfig two = scene_preset("sprites2");
    const MetricReport cross = transfer(model, "sprites4", generate(two, 40), o);
    for (const auto& r : cross.rows) {
        CHECK(*r.iou >= 0.0);
        CHECK(*r.iou <= 1.0);
    }
}

TEST_CASE("ablation driver") {
    TempDir dir("ablate");
    TrainConfig base = tiny_config(dir.path);
    base.max_steps = 3;

    SUBCASE("one cell equals a manual train and evaluate") {
        AblationOptions o;
        o.base = base;
        o.cells = {"BO-QSA"};
        o.seeds = {4};
        o.out_dir = dir.path / "one";
        o.untrained_baseline = false;
        const AblationTable table = ablate(scenes(), scenes(), o);
        REQUIRE(table.cells.size() == 1);
        REQUIRE(table.cells[0].runs.size() == 1);

        TrainConfig manual = base;
        manual.model.slots.init = InitKind::learnable_query;
        manual.model.slots.regime = GradientRegime::bilevel_straight_through;
        manual.seed = 4;
        manual.out_dir = (dir.path / "manual").string();
        const TrainResult r = train(manual, scenes());
        const Model<Real> model = model_from_checkpoint(load_checkpoint(r.last_checkpoint));
        const MetricSummary expected = evaluate(model, scenes(), o.eval).summary();
        CHECK(same_summary(table.cells[0].runs[0].summary, expected));

        const Checkpoint a = load_checkpoint(table.cells[0].runs[0].checkpoint);
        const Checkpoint b = load_checkpoint(r.last_checkpoint);
        CHECK(a.tensors.size() == b.tensors.size());
        for (std::size_t i = 0; i < a.tensors.size(); ++i) CHECK(a.tensors[i].payload == b.tensors[i].payload);

        // A second invocation reuses the finished run.
        const AblationTable again = ablate(scenes(), scenes(), o);
        CHECK(again.cells[0].runs[0].cached);
        CHECK(same_summary(again.cells[0].runs[0].summary, expected));
    }

    SUBCASE("all six cells complete on 200 samples") {
        AblationOptions o;
        o.base = base;
        o.seeds = {0, 1};
        o.out_dir = dir.path / "six";
        const AblationTable table = ablate(scenes(), scenes(), o);
        REQUIRE(table.cells.size() == 6);
        const char* names[] = {"SA", "I-SA", "BO-SA", "QSA", "I-QSA", "BO-QSA"};
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(table.cells[i].name == names[i]);
            CHECK(table.cells[i].runs.size() == 2);
            CHECK_FALSE(table.cells[i].error.has_value());
            CHECK(fs::exists(ablation_run_dir(o.out_dir, names[i], 1) / "eval.csv"));
        }
        REQUIRE(table.untrained);
        CHECK(table.untrained->runs.size() == 2);

        std::ostringstream text;
        table.write_text(text);
        std::size_t lines = 0;
        std::istringstream in(text.str());
        for (std::string line; std::getline(in, line);) lines += line.find(" | ") != std::string::npos;
        CHECK(lines == 8);  // header, untrained, six cells
        CHECK(text.str().find("±") != std::string::npos);
        table.write_csv(dir.path / "table.csv");
        CHECK(fs::exists(dir.path / "table.csv"));
    }

    SUBCASE("cell mapping and failures") {
        CHECK(ablation_cell("BO-QSA").init == InitKind::learnable_query);
        CHECK(ablation_cell("BO-QSA").regime == GradientRegime::bilevel_straight_through);
        CHECK(ablation_cell("QSA").regime == GradientRegime::full_unroll);
        CHECK(ablation_cell("SA").init == InitKind::gaussian_sample);
        CHECK(ablation_cell("SA").regime == GradientRegime::full_unroll);
        CHECK(ablation_cell("I-SA").regime == GradientRegime::detached_inner);
        CHECK_THROWS_AS(ablation_cell("XL-SA"), ConfigError);

        AblationOptions o;
        o.base = base;
        o.base.model.slots.num_slots = 3;  // too few slots for sprites4: every cell fails
        o.cells = {"SA", "QSA"};
        o.seeds = {0};
        o.out_dir = dir.path / "fail";
        o.untrained_baseline = false;
        const AblationTable table = ablate(scenes(), scenes(), o);
        REQUIRE(table.cells.size() == 2);
        CHECK(table.cells[0].error.has_value());
        CHECK(table.cells[1].error.has_value());
    }
}

TEST_CASE("render panels") {
    TempDir dir("render");
    const TrainConfig c = tiny_config(dir.path);
    const Model<Real> model(c.model, 2);
    RenderOptions o;
    o.count = 4;
    const auto rendered = render(model, scenes(), dir.path, o);
    REQUIRE(rendered.size() == 4);
    const std::size_t k = c.model.slots.num_slots, h = 32, w = 32;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const auto& r = rendered[i];
        CHECK(fs::exists(r.path));
        const Image8 png = read_png(r.path, 3);
        CHECK(png.height == h);
        CHECK(png.width == w * (k + 2));
        CHECK(png.pixels == r.image.pixels);

        // Every pixel is claimed by exactly one slot panel.
        Labels pred(h * w, -1);
        for (std::size_t p = 0; p < h * w; ++p) {
            int owners = 0;
            for (std::size_t s = 0; s < k; ++s) {
                const std::uint8_t* px = &r.image.pixels[((p / w) * png.width + (2 + s) * w + p % w) * 3];
                if (px[0] != kRenderUnassigned.r || px[1] != kRenderUnassigned.g || px[2] != kRenderUnassigned.b) {
                    ++owners;
                    pred[p] = static_cast<int>(s);
                    const bool black = px[0] == 0 && px[1] == 0 && px[2] == 0;
                    CHECK(black == (s == r.background_slot));
                }
            }
            CHECK(owners == 1);
        }
        CHECK(r.background_slot == max_intersection_slot(pred, k, scenes().samples[i].background_mask()));
        // First panel is the input image.
        for (std::size_t p = 0; p < h * w; ++p)
            CHECK(r.image.pixels[((p / w) * png.width + p % w) * 3] == scenes().samples[i].rgb[p * 3]);
    }
}
