#include "boqsa/slot_attention.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace boqsa {

std::string to_string(InitKind kind) {
    return kind == InitKind::gaussian_sample ? "gaussian" : "query";
}

std::string to_string(GradientRegime regime) {
    switch (regime) {
        case GradientRegime::full_unroll: return "full";
        case GradientRegime::detached_inner: return "detached";
        case GradientRegime::bilevel_straight_through: return "bilevel";
    }
    return "?";
}

InitKind parse_init_kind(const std::string& text) {
    if (text == "gaussian") return InitKind::gaussian_sample;
    if (text == "query") return InitKind::learnable_query;
    throw std::invalid_argument("unknown slot init '" + text + "' (expected gaussian|query)");
}

GradientRegime parse_gradient_regime(const std::string& text) {
    if (text == "full") return GradientRegime::full_unroll;
    if (text == "detached") return GradientRegime::detached_inner;
    if (text == "bilevel") return GradientRegime::bilevel_straight_through;
    throw std::invalid_argument("unknown gradient regime '" + text + "' (expected full|detached|bilevel)");
}

void SlotAttentionConfig::validate() const {
    if (num_slots < 1) throw std::invalid_argument("slot attention needs at least one slot");
    if (iterations < 1) throw std::invalid_argument("slot attention needs at least one iteration");
    if (!(eps > 0.0)) throw std::invalid_argument("slot attention eps must be positive");
    if (slot_dim < 1 || input_dim < 1) throw std::invalid_argument("slot attention dims must be positive");
}

double sigma_at(std::size_t step, std::size_t n_sigma) {
    if (n_sigma == 0) return 0.0;
    const double progress = static_cast<double>(std::min(step, n_sigma)) / static_cast<double>(n_sigma);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

template <typename T>
Tensor<T> gaussian_noise(Shape shape, Rng& rng) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal());
    return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
    for (T v : t.data()) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
    }
}

}  // namespace

template <typename T>
Tensor<T> init_slots(const InitStrategy<T>& strategy, std::size_t num_slots, std::size_t batch,
                     std::optional<std::size_t> step, Rng& rng) {
    if (const auto* g = std::get_if<GaussianSample<T>>(&strategy)) {
        const std::size_t d = g->mu.dim(-1);
        const Shape shape{batch, num_slots, d};
        const Tensor<T> noise = gaussian_noise<T>(shape, rng);
        return add(reshape(g->mu, {1, 1, d}), mul(reshape(exp(g->log_sigma), {1, 1, d}), noise));
    }
    const auto& q = std::get<LearnableQuery<T>>(strategy);
    const std::size_t k = q.queries.dim(0), d = q.queries.dim(1);
    const Shape shape{batch, k, d};
    const Tensor<T> broadcast = expand(reshape(q.queries, {1, k, d}), shape);
    const double sigma = step ? sigma_at(*step, q.sigma_steps) : 0.0;
    if (sigma == 0.0) return broadcast;
    // Fresh zero-mean noise per batch element and slot.
    return add(broadcast, scale(gaussian_noise<T>(shape, rng), static_cast<T>(sigma)));
}

template <typename T>
SlotAttention<T>::SlotAttention(const SlotAttentionConfig& config, Rng& rng)
    : norm_inputs(config.input_dim),
      norm_slots(config.slot_dim),
      norm_mlp(config.slot_dim),
      to_q(config.slot_dim, config.slot_dim, false, rng),
      to_k(config.input_dim, config.slot_dim, false, rng),
      to_v(config.input_dim, config.slot_dim, false, rng),
      gru(config.slot_dim, config.slot_dim, rng),
      mlp(config.slot_dim, config.mlp_hidden, config.slot_dim, rng),
      config_(config) {
    config_.validate();
    const std::size_t d = config.slot_dim;
    if (config.init == InitKind::gaussian_sample) {
        init = GaussianSample<T>{xavier_uniform<T>({1, d}, 1, d, rng), xavier_uniform<T>({1, d}, 1, d, rng)};
    } else {
        init = LearnableQuery<T>{xavier_uniform<T>({config.num_slots, d}, config.num_slots, d, rng), config.sigma_steps};
    }
}

template <typename T>
typename SlotAttention<T>::Projected SlotAttention<T>::project_inputs(const Tensor<T>& features) const {
    if (features.rank() != 3 || features.dim(2) != config_.input_dim) {
        throw DimensionError("slot attention expects features [B, N, " + std::to_string(config_.input_dim) + "], got " +
                             shape_str(features.shape()));
    }
    const Tensor<T> x = config_.bypass_layernorm ? features : norm_inputs(features);
    return {to_k(x), to_v(x)};
}

template <typename T>
AttentionStepResult<T> SlotAttention<T>::attention_step(const Tensor<T>& slots, const Projected& inputs) const {
    const std::size_t batch = slots.dim(0), k = slots.dim(1), d = slots.dim(2);
    if (inputs.keys.dim(0) != batch || d != config_.slot_dim) {
        throw DimensionError("attention_step: slots " + shape_str(slots.shape()) + " vs keys " +
                             shape_str(inputs.keys.shape()));
    }
    const Tensor<T> q = to_q(config_.bypass_layernorm ? slots : norm_slots(slots));
    const T scale_factor = T{1} / std::sqrt(static_cast<T>(d));
    // Softmax over the slot axis: slots compete for each input position.
    const Tensor<T> logits = scale(matmul(inputs.keys, transpose(q, 1, 2)), scale_factor);  // [B, N, K]
    const Tensor<T> attention = softmax(logits, 2);
    require_finite(attention, "attention matrix");
    // Weighted mean over positions per slot.
    const Tensor<T> column = add_scalar(sum(attention, 1, true), static_cast<T>(config_.eps));
    const Tensor<T> weights = div(attention, column);
    const Tensor<T> updates = matmul(transpose(weights, 1, 2), inputs.values);  // [B, K, D]

    Tensor<T> h = gru_step(reshape(slots, {batch * k, d}), reshape(updates, {batch * k, d}), gru);
    h = add(h, mlp(config_.bypass_layernorm ? h : norm_mlp(h)));
    return {reshape(h, {batch, k, d}), attention, updates};
}

template <typename T>
SlotState<T> SlotAttention<T>::run(const Tensor<T>& features, std::optional<std::size_t> step, Rng& rng,
                                   const RunOptions<T>& options) const {
    const Tensor<T> init_value = init_slots(init, config_.num_slots, features.dim(0), step, rng);
    return run_from(features, init_value, options);
}

template <typename T>
SlotState<T> SlotAttention<T>::run_from(const Tensor<T>& features, const Tensor<T>& init_value,
                                        const RunOptions<T>& options) const {
    const std::size_t iterations = options.iterations.value_or(config_.iterations);
    if (iterations < 1) throw std::invalid_argument("slot attention needs at least one iteration");
    const Projected inputs = project_inputs(features);

    SlotState<T> state;
    state.init = init_value;
    if (config_.regime == GradientRegime::full_unroll) {
        Tensor<T> slots = init_value;
        for (std::size_t t = 0; t < iterations; ++t) {
            state.final_input = slots;
            auto result = attention_step(slots, inputs);
            slots = result.slots;
            state.attention = result.attention;
        }
        state.slots = slots;
        return state;
    }

    // T total steps: T - 1 undifferentiated inner steps, then one step that
    // carries gradients to the attention/update parameters.
    Tensor<T> inner;
    {
        NoGradGuard no_grad;
        Tensor<T> slots = init_value;
        for (std::size_t t = 0; t + 1 < iterations; ++t) slots = attention_step(slots, inputs).slots;
        inner = detach(slots);
    }
    state.inner = inner;
    if (options.inner_override) inner = *options.inner_override;
    // BO: SG(slots) + init - SG(init), routing the outer gradient to the
    // initializer with an identity Jacobian.
    state.final_input = config_.regime == GradientRegime::bilevel_straight_through ? straight_through(inner, init_value)
                                                                                   : inner;
    auto result = attention_step(state.final_input, inputs);
    state.slots = result.slots;
    state.attention = result.attention;
    return state;
}

template <typename T>
void SlotAttention<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
    if (const auto* g = std::get_if<GaussianSample<T>>(&init)) {
        out.emplace_back(prefix + ".init.mu", g->mu);
        out.emplace_back(prefix + ".init.log_sigma", g->log_sigma);
    } else {
        out.emplace_back(prefix + ".init.queries", std::get<LearnableQuery<T>>(init).queries);
    }
    norm_inputs.collect(prefix + ".norm_inputs", out);
    norm_slots.collect(prefix + ".norm_slots", out);
    norm_mlp.collect(prefix + ".norm_mlp", out);
    to_q.collect(prefix + ".to_q", out);
    to_k.collect(prefix + ".to_k", out);
    to_v.collect(prefix + ".to_v", out);
    gru.collect(prefix + ".gru", out);
    mlp.collect(prefix + ".mlp", out);
}

template Tensor<float> init_slots<float>(const InitStrategy<float>&, std::size_t, std::size_t,
                                         std::optional<std::size_t>, Rng&);
template Tensor<double> init_slots<double>(const InitStrategy<double>&, std::size_t, std::size_t,
                                           std::optional<std::size_t>, Rng&);
template class SlotAttention<float>;
template class SlotAttention<double>;

}  // namespace boqsa
