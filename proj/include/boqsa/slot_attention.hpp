#pragma once

// Iterative slot attention with pluggable slot initialization and gradient
// regime.
//
// Viewed as a bi-level problem, the per-image slots play the role of the
// inner variables (solved approximately by the fixed-point iteration of
// attention_step) and the module parameters are the outer variables trained
// on the reconstruction objective. The inner clustering objective itself is
// never materialized.

#include <optional>
#include <string>
#include <variant>

#include "boqsa/nn.hpp"

namespace boqsa {

enum class InitKind { gaussian_sample, learnable_query };

enum class GradientRegime {
    full_unroll,               // SA: backprop through every iteration
    detached_inner,            // I-SA: only the last step is differentiated
    bilevel_straight_through,  // BO: as I-SA plus a straight-through path to the initializer
};

std::string to_string(InitKind kind);
std::string to_string(GradientRegime regime);
InitKind parse_init_kind(const std::string& text);
GradientRegime parse_gradient_regime(const std::string& text);

struct SlotAttentionConfig {
    std::size_t num_slots = 5;
    std::size_t slot_dim = 64;
    std::size_t input_dim = 64;
    std::size_t mlp_hidden = 128;
    std::size_t iterations = 3;  // total attention steps T
    double eps = 1e-8;
    InitKind init = InitKind::learnable_query;
    GradientRegime regime = GradientRegime::bilevel_straight_through;
    std::size_t sigma_steps = 30000;  // N_sigma for query perturbation
    bool bypass_layernorm = false;    // oracle-check mode

    /// Throws std::invalid_argument on K < 1, T < 1 or eps <= 0.
    void validate() const;
};

/// Cosine-annealed perturbation scale: 1 at step 0, 0 from n_sigma on.
double sigma_at(std::size_t step, std::size_t n_sigma);

template <typename T>
struct GaussianSample {
    Tensor<T> mu;         // [1, D]
    Tensor<T> log_sigma;  // [1, D]
};

template <typename T>
struct LearnableQuery {
    Tensor<T> queries;  // [K, D]
    std::size_t sigma_steps = 0;
};

template <typename T>
using InitStrategy = std::variant<GaussianSample<T>, LearnableQuery<T>>;

/// Initial slots [B, K, D]. `step` is the training step driving the query
/// perturbation; std::nullopt means inference (no perturbation).
template <typename T>
Tensor<T> init_slots(const InitStrategy<T>& strategy, std::size_t num_slots, std::size_t batch,
                     std::optional<std::size_t> step, Rng& rng);

template <typename T>
struct SlotState {
    Tensor<T> slots;      // [B, K, D]
    Tensor<T> attention;  // [B, N, K], last step
    Tensor<T> init;       // [B, K, D] initial slots
    // Slot input of the final differentiated step. For the detached regimes
    // this is the straight-through / detached value; for full unroll it is
    // the input of the last iteration.
    Tensor<T> final_input;
    Tensor<T> inner;  // detached regimes: no-grad inner result (before any override)
};

template <typename T>
struct AttentionStepResult {
    Tensor<T> slots;      // [B, K, D]
    Tensor<T> attention;  // [B, N, K]
    Tensor<T> updates;    // weighted means s~, [B, K, D]
};

template <typename T>
struct RunOptions {
    std::optional<std::size_t> iterations;  // replaces config T (inference sweeps)
    std::optional<Tensor<T>> inner_override;  // replaces the no-grad inner result
};

template <typename T>
class SlotAttention {
public:
    SlotAttention(const SlotAttentionConfig& config, Rng& rng);

    const SlotAttentionConfig& config() const { return config_; }
    SlotAttentionConfig& mutable_config() { return config_; }

    InitStrategy<T> init;
    LayerNorm<T> norm_inputs;
    LayerNorm<T> norm_slots;
    LayerNorm<T> norm_mlp;
    Linear<T> to_q;
    Linear<T> to_k;
    Linear<T> to_v;
    GruCell<T> gru;
    Mlp<T> mlp;

    struct Projected {
        Tensor<T> keys;    // [B, N, D]
        Tensor<T> values;  // [B, N, D]
    };
    Projected project_inputs(const Tensor<T>& features) const;

    AttentionStepResult<T> attention_step(const Tensor<T>& slots, const Projected& inputs) const;
    AttentionStepResult<T> attention_step(const Tensor<T>& slots, const Tensor<T>& features) const {
        return attention_step(slots, project_inputs(features));
    }

    /// Full module: initialize, iterate under the configured regime.
    SlotState<T> run(const Tensor<T>& features, std::optional<std::size_t> step, Rng& rng,
                     const RunOptions<T>& options = {}) const;
    /// Same, starting from caller-provided initial slots.
    SlotState<T> run_from(const Tensor<T>& features, const Tensor<T>& init_slots,
                          const RunOptions<T>& options = {}) const;

    void collect(const std::string& prefix, NamedTensors<T>& out) const;

private:
    SlotAttentionConfig config_;
};

}  // namespace boqsa
