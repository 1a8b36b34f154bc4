#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "boqsa/harness.hpp"

namespace boqsa {

namespace fs = std::filesystem;

const std::vector<AblationCell>& ablation_cells() {
    static const std::vector<AblationCell> cells{
        {"SA", InitKind::gaussian_sample, GradientRegime::full_unroll},
        {"I-SA", InitKind::gaussian_sample, GradientRegime::detached_inner},
        {"BO-SA", InitKind::gaussian_sample, GradientRegime::bilevel_straight_through},
        {"QSA", InitKind::learnable_query, GradientRegime::full_unroll},
        {"I-QSA", InitKind::learnable_query, GradientRegime::detached_inner},
        {"BO-QSA", InitKind::learnable_query, GradientRegime::bilevel_straight_through},
    };
    return cells;
}

const AblationCell& ablation_cell(const std::string& name) {
    for (const auto& c : ablation_cells()) {
        if (c.name == name) return c;
    }
    throw ConfigError("unknown ablation cell '" + name + "' (expected SA, I-SA, BO-SA, QSA, I-QSA or BO-QSA)");
}

MeanStd CellOutcome::across_seeds(double MeanStd::*field, MeanStd MetricSummary::*metric) const {
    std::vector<double> values;
    for (const auto& r : runs) values.push_back(r.summary.*metric.*field);
    return mean_std(values);
}

const CellOutcome* AblationTable::find(const std::string& name) const {
    for (const auto& c : cells) {
        if (c.name == name) return &c;
    }
    if (untrained && untrained->name == name) return &*untrained;
    return nullptr;
}

double AblationTable::total_train_seconds() const {
    double total = 0.0;
    for (const auto& c : cells) {
        for (const auto& r : c.runs) total += r.train_seconds;
    }
    return total;
}

namespace {

struct Column {
    const char* title;
    MeanStd MetricSummary::*metric;
};

constexpr Column kColumns[] = {
    {"ARI-FG", &MetricSummary::ari_fg}, {"MSC-FG", &MetricSummary::msc_fg}, {"IoU", &MetricSummary::iou},
    {"Dice", &MetricSummary::dice},     {"MSE", &MetricSummary::mse_per_pixel},
};

std::string pm(const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", m.mean, m.stddev);
    return buf;
}

std::vector<const CellOutcome*> rows_of(const AblationTable& table) {
    std::vector<const CellOutcome*> rows;
    if (table.untrained) rows.push_back(&*table.untrained);
    for (const auto& c : table.cells) rows.push_back(&c);
    return rows;
}

}  // namespace

void AblationTable::write_text(std::ostream& out) const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-10s", "Method");
    out << buf;
    for (const auto& col : kColumns) {
        std::snprintf(buf, sizeof(buf), " | %-17s", col.title);
        out << buf;
    }
    out << " | seeds\n";
    for (const CellOutcome* c : rows_of(*this)) {
        std::snprintf(buf, sizeof(buf), "%-10s", c->name.c_str());
        out << buf;
        if (c->error && c->runs.empty()) {
            out << " | failed: " << *c->error << '\n';
            continue;
        }
        for (const auto& col : kColumns) {
            std::snprintf(buf, sizeof(buf), " | %-17s", pm(c->across_seeds(col.metric)).c_str());
            out << buf;
        }
        out << " | " << c->runs.size();
        if (c->error) out << " (error: " << *c->error << ")";
        out << '\n';
    }
    out << "(mean ± sample stddev across seeds)\n";
}

void AblationTable::write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(10);
    out << "method,seeds";
    for (const auto& col : kColumns) out << ',' << col.title << "_mean," << col.title << "_std";
    out << ",train_seconds,error\n";
    for (const CellOutcome* c : rows_of(*this)) {
        double seconds = 0.0;
        for (const auto& r : c->runs) seconds += r.train_seconds;
        out << c->name << ',' << c->runs.size();
        for (const auto& col : kColumns) {
            const MeanStd m = c->across_seeds(col.metric);
            out << ',' << m.mean << ',' << m.stddev;
        }
        out << ',' << seconds << ',' << (c->error ? *c->error : "") << '\n';
    }
    if (!out) throw IoError("cannot write " + path.string());
}

fs::path ablation_run_dir(const fs::path& out_dir, const std::string& cell, std::uint64_t seed) {
    return out_dir / cell / ("seed_" + std::to_string(seed));
}

TrainConfig ablation_run_config(const TrainConfig& base, const AblationCell& cell, std::uint64_t seed,
                                const fs::path& out_dir) {
    TrainConfig config = base;
    config.model.slots.init = cell.init;
    config.model.slots.regime = cell.regime;
    config.seed = seed;
    config.out_dir = ablation_run_dir(out_dir, cell.name, seed).string();
    config.finalize();
    return config;
}

namespace {

// Wall time of a finished run, read back from the "# done" line of its log.
double logged_wall_seconds(const fs::path& run_dir) {
    std::ifstream in(run_dir / "train.log");
    std::string line;
    double seconds = 0.0;
    while (std::getline(in, line)) {
        const auto pos = line.find("wall_seconds=");
        if (line.rfind("# done", 0) == 0 && pos != std::string::npos) seconds = std::stod(line.substr(pos + 13));
    }
    return seconds;
}

std::optional<Checkpoint> cached_final(const TrainConfig& config) {
    const fs::path path = final_checkpoint_path(config.out_dir);
    if (!fs::exists(path)) return std::nullopt;
    try {
        Checkpoint ckpt = load_checkpoint(path);
        if (ckpt.config_echo == config_echo(config) && ckpt.step == config.max_steps) return ckpt;
    } catch (const IoError&) {
    }
    return std::nullopt;
}

}  // namespace

AblationTable ablate(const Dataset& train_data, const Dataset& eval_data, const AblationOptions& options) {
    std::vector<AblationCell> cells;
    if (options.cells.empty()) {
        cells = ablation_cells();
    } else {
        for (const auto& name : options.cells) cells.push_back(ablation_cell(name));
    }
    if (options.seeds.empty()) throw ConfigError("ablation needs at least one seed");

    const auto note = [&](const std::string& text) {
        if (options.progress) *options.progress << text << std::endl;
    };

    AblationTable table;
    if (options.untrained_baseline) {
        CellOutcome base;
        base.name = "untrained";
        for (std::uint64_t seed : options.seeds) {
            TrainConfig config = options.base;
            config.seed = seed;
            config.finalize();
            const Model<Real> model(config.model, seed);
            EvalOptions eval = options.eval;
            eval.tag = "untrained/seed_" + std::to_string(seed);
            base.runs.push_back({seed, evaluate(model, eval_data, eval).summary(), 0.0, false, {}});
        }
        table.untrained = std::move(base);
    }

    for (const auto& cell : cells) {
        CellOutcome outcome;
        outcome.name = cell.name;
        for (std::uint64_t seed : options.seeds) {
            try {
                const TrainConfig config = ablation_run_config(options.base, cell, seed, options.out_dir);
                SeedOutcome run;
                run.seed = seed;
                run.checkpoint = final_checkpoint_path(config.out_dir);
                std::optional<Checkpoint> ckpt = cached_final(config);
                if (ckpt) {
                    run.cached = true;
                    run.train_seconds = logged_wall_seconds(config.out_dir);
                    note(cell.name + " seed " + std::to_string(seed) + ": reusing " + run.checkpoint.string());
                } else {
                    note(cell.name + " seed " + std::to_string(seed) + ": training " + std::to_string(config.max_steps) +
                         " steps");
                    const TrainResult result = train(config, train_data);
                    run.train_seconds = result.wall_seconds;
                    ckpt = load_checkpoint(result.last_checkpoint);
                }
                EvalOptions eval = options.eval;
                eval.tag = cell.name + "/seed_" + std::to_string(seed);
                const MetricReport report = evaluate(model_from_checkpoint(*ckpt), eval_data, eval);
                report.write_csv((fs::path(config.out_dir) / "eval.csv").string());
                run.summary = report.summary();
                note(cell.name + " seed " + std::to_string(seed) + ": ARI-FG " + std::to_string(run.summary.ari_fg.mean));
                outcome.runs.push_back(std::move(run));
            } catch (const std::exception& e) {
                outcome.error = "seed " + std::to_string(seed) + ": " + e.what();
                note(cell.name + " failed: " + *outcome.error);
            }
        }
        table.cells.push_back(std::move(outcome));
    }
    return table;
}

}  // namespace boqsa
