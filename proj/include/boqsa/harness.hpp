#pragma once

// Training, evaluation and the experiment drivers built on top of them.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "boqsa/checkpoint.hpp"
#include "boqsa/config.hpp"
#include "boqsa/metrics.hpp"
#include "boqsa/model.hpp"
#include "boqsa/optim.hpp"
#include "boqsa/png_io.hpp"
#include "boqsa/scenegen.hpp"

namespace boqsa {

/// Precision used by the training and evaluation drivers.
using Real = float;

class TrainingAborted : public NumericError {
public:
    TrainingAborted(std::size_t step, std::filesystem::path checkpoint, const std::string& what)
        : NumericError(what), step_(step), checkpoint_(std::move(checkpoint)) {}
    std::size_t step() const { return step_; }
    const std::filesystem::path& checkpoint() const { return checkpoint_; }

private:
    std::size_t step_;
    std::filesystem::path checkpoint_;
};

struct TrainOptions {
    std::ostream* log = nullptr;                  // mirror of the step log (e.g. stdout)
    std::optional<std::filesystem::path> resume;  // continue from this checkpoint
    std::optional<std::size_t> stop_after;        // stop (and checkpoint) once this many steps are done
    bool write_files = true;                      // step log and checkpoints under config.out_dir
};

struct TrainResult {
    std::size_t start_step = 0;
    std::size_t end_step = 0;
    std::vector<double> losses;  // losses[i] belongs to step start_step + i
    std::filesystem::path last_checkpoint;
    double wall_seconds = 0.0;
};

/// File names inside a run directory.
std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::size_t step);
std::filesystem::path final_checkpoint_path(const std::filesystem::path& run_dir);

/// Seed of the stateless per-step stream (batch indices and slot noise).
std::uint64_t step_seed(std::uint64_t run_seed, std::size_t step);

Checkpoint make_checkpoint(const Model<Real>& model, const Adam<Real>* adam, std::size_t step,
                           const TrainConfig& config);
TrainConfig config_from_checkpoint(const Checkpoint& checkpoint);
Model<Real> model_from_checkpoint(const Checkpoint& checkpoint);

/// Trains config.model on `data` with Adam under the lr and sigma schedules.
/// Throws TrainingAborted on a non-finite loss after checkpointing the state
/// that produced it.
TrainResult train(const TrainConfig& config, const Dataset& data, const TrainOptions& options = {});

struct EvalOptions {
    std::optional<std::size_t> iterations;  // T at inference; config T if unset
    std::size_t batch_size = 50;
    std::uint64_t seed = 0;                 // slot noise for Gaussian initialization
    std::size_t threads = 1;
    std::string tag = "eval";
};

/// Per-image ARI-FG, MSC-FG, foreground IoU/Dice and MSE over `data`.
MetricReport evaluate(const Model<Real>& model, const Dataset& data, const EvalOptions& options = {});

/// Zero-shot evaluation of a trained model on another dataset, tagged
/// "source→target".
MetricReport transfer(const Model<Real>& model, const std::string& source_name, const Dataset& target,
                      EvalOptions options = {});

/// One report per T in [1, max_iterations], tagged "T=<t>".
std::vector<MetricReport> sweep_iterations(const Model<Real>& model, const Dataset& data, std::size_t max_iterations,
                                           EvalOptions options = {});

struct RenderOptions {
    std::size_t count = 8;
    std::optional<std::size_t> iterations;
    std::uint64_t seed = 0;
};

struct RenderedSample {
    std::filesystem::path path;
    std::size_t background_slot = 0;
    Image8 image;
};

/// Per sample a PNG of height H and width W * (K + 2): input, reconstruction
/// and one panel per slot. A slot panel paints the pixels it wins (argmax)
/// in the slot color on a gray field; the slot overlapping the ground-truth
/// background most is painted black.
std::vector<RenderedSample> render(const Model<Real>& model, const Dataset& data, const std::filesystem::path& out_dir,
                                   const RenderOptions& options = {});
Rgb8 render_slot_color(std::size_t slot);
inline constexpr Rgb8 kRenderUnassigned{128, 128, 128};

struct AblationCell {
    std::string name;
    InitKind init;
    GradientRegime regime;
};

/// SA, I-SA, BO-SA, QSA, I-QSA, BO-QSA.
const std::vector<AblationCell>& ablation_cells();
const AblationCell& ablation_cell(const std::string& name);

struct SeedOutcome {
    std::uint64_t seed = 0;
    MetricSummary summary;
    double train_seconds = 0.0;
    bool cached = false;
    std::filesystem::path checkpoint;
};

struct CellOutcome {
    std::string name;
    std::vector<SeedOutcome> runs;
    std::optional<std::string> error;

    /// Mean and sample stddev over seeds of a per-run summary field.
    MeanStd across_seeds(double MeanStd::*field, MeanStd MetricSummary::*metric) const;
    MeanStd across_seeds(MeanStd MetricSummary::*metric) const { return across_seeds(&MeanStd::mean, metric); }
};

struct AblationOptions {
    TrainConfig base;
    std::vector<std::string> cells;  // empty: all six
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::filesystem::path out_dir = "ablation";
    bool untrained_baseline = true;
    EvalOptions eval;
    std::ostream* progress = nullptr;
};

struct AblationTable {
    std::vector<CellOutcome> cells;
    std::optional<CellOutcome> untrained;

    const CellOutcome* find(const std::string& name) const;
    double total_train_seconds() const;
    /// Method | ARI-FG | MSC-FG | IoU | Dice | MSE, each "mean ± std".
    void write_text(std::ostream& out) const;
    void write_csv(const std::filesystem::path& path) const;
};

/// Run directory of one (cell, seed) pair.
std::filesystem::path ablation_run_dir(const std::filesystem::path& out_dir, const std::string& cell, std::uint64_t seed);
/// Training config of one (cell, seed) pair derived from `base`.
TrainConfig ablation_run_config(const TrainConfig& base, const AblationCell& cell, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

/// Trains every (cell, seed) with matched budgets and evaluates on `eval`.
/// Runs whose final checkpoint already carries the same config echo are
/// reused. A failing cell records its error and the others proceed.
AblationTable ablate(const Dataset& train_data, const Dataset& eval_data, const AblationOptions& options);

}  // namespace boqsa
