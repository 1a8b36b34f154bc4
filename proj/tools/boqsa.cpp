#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "boqsa/gradcheck.hpp"
#include "boqsa/harness.hpp"

namespace fs = std::filesystem;
using namespace boqsa;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t threads = 1;
};

void add_common(CLI::App* app, Common& common, const std::string& out_help) {
    app->add_option("--config", common.config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", common.seed, "seed");
    app->add_option("--out", common.out, out_help);
    app->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
}

// Registers --<key> for every config key; values are applied after the preset
// and the config file.
struct ConfigOverrides {
    std::string preset = "desk";
    std::map<std::string, std::string> values;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "base configuration: desk | full")->check(CLI::IsMember({"desk", "full"}));
        for (const auto& key : config_keys()) {
            app->add_option("--" + key.name, values[key.name], key.help)->group("Config keys");
        }
    }

    TrainConfig resolve(const Common& common) const {
        TrainConfig config = preset_config(preset);
        if (!common.config_path.empty()) apply_config_file(config, common.config_path);
        for (const auto& [key, value] : values) {
            if (!value.empty()) set_config_value(config, key, value);
        }
        if (common.seed) config.seed = *common.seed;
        config.finalize();
        return config;
    }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
    }
    return seeds;
}

std::vector<std::string> split(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void print_summary(const MetricReport& report) {
    const MetricSummary s = report.summary();
    std::printf("%-16s images=%zu ARI-FG=%.4f MSC-FG=%.4f (unweighted %.4f) IoU=%.4f Dice=%.4f MSE=%.6f (x HW: %.3f)\n",
                report.tag.c_str(), s.images, s.ari_fg.mean, s.msc_fg.mean, s.msc_fg_unweighted.mean, s.iou.mean,
                s.dice.mean, s.mse_per_pixel.mean, s.mse_slate_total.mean);
    if (s.skipped_ari || s.skipped_msc || s.skipped_fg) {
        std::printf("  skipped: ari_fg=%zu msc_fg=%zu fg_extraction=%zu\n", s.skipped_ari, s.skipped_msc, s.skipped_fg);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Slot attention with learnable queries and bi-level gradient routing"};
    app.require_subcommand(1);

    // gen
    Common gen_common;
    std::string gen_preset = "sprites4";
    std::size_t gen_count = 1000;
    auto* gen = app.add_subcommand("gen", "generate a sprite dataset");
    add_common(gen, gen_common, "dataset directory");
    gen->add_option("--preset", gen_preset, "sprites2 | sprites4")->check(CLI::IsMember({"sprites2", "sprites4"}));
    gen->add_option("--count", gen_count, "number of samples")->check(CLI::PositiveNumber);

    // train
    Common train_common;
    ConfigOverrides train_cfg;
    std::string train_dataset, resume;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, train_common, "run directory (checkpoints, train.log)");
    train_cfg.attach(train_cmd);
    train_cmd->add_option("--dataset", train_dataset, "training dataset directory");
    train_cmd->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

    // eval
    Common eval_common;
    std::string eval_ckpt, eval_dataset;
    std::optional<std::size_t> eval_iters;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, eval_common, "CSV report path");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--dataset", eval_dataset, "dataset directory")->required();
    eval_cmd->add_option("--iterations", eval_iters, "attention steps at inference")->check(CLI::PositiveNumber);

    // ablate
    Common abl_common;
    ConfigOverrides abl_cfg;
    std::string abl_train, abl_eval, abl_cells, abl_seeds = "0,1,2";
    bool abl_no_baseline = false;
    auto* abl_cmd = app.add_subcommand("ablate", "train and compare initialization x gradient-regime cells");
    add_common(abl_cmd, abl_common, "ablation directory");
    abl_cfg.attach(abl_cmd);
    abl_cmd->add_option("--dataset", abl_train, "training dataset")->required();
    abl_cmd->add_option("--eval-dataset", abl_eval, "evaluation dataset")->required();
    abl_cmd->add_option("--cells", abl_cells, "comma list of SA,I-SA,BO-SA,QSA,I-QSA,BO-QSA (default all)");
    abl_cmd->add_option("--seeds", abl_seeds, "comma list of seeds");
    abl_cmd->add_flag("--no-baseline", abl_no_baseline, "skip the untrained baseline row");

    // transfer
    Common tr_common;
    std::string tr_ckpt, tr_dataset, tr_source;
    auto* tr_cmd = app.add_subcommand("transfer", "zero-shot evaluation on another dataset");
    add_common(tr_cmd, tr_common, "CSV report path");
    tr_cmd->add_option("--checkpoint", tr_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    tr_cmd->add_option("--dataset", tr_dataset, "target dataset directory")->required();
    tr_cmd->add_option("--source", tr_source, "name of the training dataset (default: from checkpoint)");

    // sweep-iters
    Common sw_common;
    std::string sw_ckpt, sw_dataset;
    std::size_t sw_max = 5;
    auto* sw_cmd = app.add_subcommand("sweep-iters", "evaluate with T = 1..N attention steps");
    add_common(sw_cmd, sw_common, "output directory for per-T CSVs");
    sw_cmd->add_option("--checkpoint", sw_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    sw_cmd->add_option("--dataset", sw_dataset, "dataset directory")->required();
    sw_cmd->add_option("--max-iterations", sw_max, "largest T")->check(CLI::PositiveNumber);

    // render
    Common rd_common;
    std::string rd_ckpt, rd_dataset;
    std::size_t rd_count = 8;
    auto* rd_cmd = app.add_subcommand("render", "write input | reconstruction | slot panels as PNG");
    add_common(rd_cmd, rd_common, "output directory");
    rd_cmd->add_option("--checkpoint", rd_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    rd_cmd->add_option("--dataset", rd_dataset, "dataset directory")->required();
    rd_cmd->add_option("--count", rd_count, "samples to render")->check(CLI::PositiveNumber);

    // gradcheck
    Common gc_common;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    add_common(gc_cmd, gc_common, "optional text report path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            if (gen_common.out.empty()) throw ConfigError("gen needs --out");
            SceneConfig config = scene_preset(gen_preset);
            config.seed = gen_common.seed.value_or(0);
            const Dataset data = generate(config, gen_count, gen_common.threads);
            save_dataset(data, gen_common.out);
            std::cout << "wrote " << data.size() << " samples to " << gen_common.out << " (sha256 " << dataset_hash(data)
                      << ")\n";
        } else if (*train_cmd) {
            TrainConfig config = train_cfg.resolve(train_common);
            if (!train_dataset.empty()) config.dataset = train_dataset;
            if (!train_common.out.empty()) config.out_dir = train_common.out;
            if (config.dataset.empty()) throw ConfigError("train needs --dataset (or train.dataset)");
            const Dataset data = load_dataset(config.dataset);
            TrainOptions options;
            options.log = &std::cout;
            if (!resume.empty()) options.resume = resume;
            const TrainResult result = train(config, data, options);
            std::cout << "finished at step " << result.end_step << "; checkpoint " << result.last_checkpoint.string()
                      << "\n";
        } else if (*eval_cmd) {
            const Model<Real> model = model_from_checkpoint(load_checkpoint(eval_ckpt));
            const Dataset data = load_dataset(eval_dataset);
            EvalOptions options;
            options.iterations = eval_iters;
            options.seed = eval_common.seed.value_or(0);
            options.threads = eval_common.threads;
            options.tag = data.config.name;
            const MetricReport report = evaluate(model, data, options);
            if (!eval_common.out.empty()) report.write_csv(eval_common.out);
            print_summary(report);
        } else if (*abl_cmd) {
            AblationOptions options;
            options.base = abl_cfg.resolve(abl_common);
            options.base.dataset = abl_train;
            options.cells = split(abl_cells);
            options.seeds = parse_seeds(abl_seeds);
            options.out_dir = abl_common.out.empty() ? "ablation" : abl_common.out;
            options.untrained_baseline = !abl_no_baseline;
            options.eval.threads = abl_common.threads;
            options.progress = &std::cout;
            const Dataset train_data = load_dataset(abl_train);
            const Dataset eval_data = load_dataset(abl_eval);
            const AblationTable table = ablate(train_data, eval_data, options);
            fs::create_directories(options.out_dir);
            table.write_csv(options.out_dir / "table.csv");
            std::ofstream text(options.out_dir / "table.txt");
            table.write_text(text);
            table.write_text(std::cout);
        } else if (*tr_cmd) {
            const Checkpoint ckpt = load_checkpoint(tr_ckpt);
            const Model<Real> model = model_from_checkpoint(ckpt);
            const Dataset target = load_dataset(tr_dataset);
            std::string source = tr_source;
            if (source.empty()) {
                const std::string path = config_from_checkpoint(ckpt).dataset;
                source = path.empty() ? "source" : load_dataset(path).config.name;
            }
            EvalOptions options;
            options.seed = tr_common.seed.value_or(0);
            options.threads = tr_common.threads;
            const MetricReport report = transfer(model, source, target, options);
            if (!tr_common.out.empty()) report.write_csv(tr_common.out);
            print_summary(report);
            std::printf("mIoU %s = %.4f\n", report.tag.c_str(), report.summary().iou.mean);
        } else if (*sw_cmd) {
            const Model<Real> model = model_from_checkpoint(load_checkpoint(sw_ckpt));
            const Dataset data = load_dataset(sw_dataset);
            EvalOptions options;
            options.seed = sw_common.seed.value_or(0);
            options.threads = sw_common.threads;
            const auto reports = sweep_iterations(model, data, sw_max, options);
            const fs::path out = sw_common.out.empty() ? "sweep" : sw_common.out;
            fs::create_directories(out);
            std::ofstream curve(out / "curve.csv");
            curve << "iterations,ari_fg,msc_fg,iou,dice,mse_per_pixel\n";
            for (std::size_t t = 0; t < reports.size(); ++t) {
                reports[t].write_csv((out / ("T" + std::to_string(t + 1) + ".csv")).string());
                const MetricSummary s = reports[t].summary();
                curve << t + 1 << ',' << s.ari_fg.mean << ',' << s.msc_fg.mean << ',' << s.iou.mean << ','
                      << s.dice.mean << ',' << s.mse_per_pixel.mean << '\n';
                print_summary(reports[t]);
            }
        } else if (*rd_cmd) {
            const Model<Real> model = model_from_checkpoint(load_checkpoint(rd_ckpt));
            const Dataset data = load_dataset(rd_dataset);
            RenderOptions options;
            options.count = rd_count;
            options.seed = rd_common.seed.value_or(0);
            const auto rendered = render(model, data, rd_common.out.empty() ? "render" : rd_common.out, options);
            std::cout << "wrote " << rendered.size() << " renders\n";
        } else if (*gc_cmd) {
            const auto results = run_gradcheck_suite(gc_common.seed.value_or(0));
            std::ostringstream text;
            bool ok = true;
            for (const auto& r : results) {
                char line[200];
                std::snprintf(line, sizeof(line), "%-4s %-48s err=%.3e tol=%.0e entries=%zu kink-skipped=%zu (%.2fs)\n",
                              r.passed() ? "ok" : "FAIL", r.name.c_str(), r.max_error, r.tolerance, r.entries,
                              r.skipped, r.seconds);
                text << line;
                ok = ok && r.passed();
            }
            std::cout << text.str();
            if (!gc_common.out.empty()) std::ofstream(gc_common.out) << text.str();
            return ok ? 0 : 1;
        }
    } catch (const TrainingAborted& e) {
        std::cerr << "error: " << e.what() << "; state saved to " << e.checkpoint().string() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
