#pragma once

// Randomized structural checks shared by the unit tests and the acceptance
// binary. Each function builds one random instance from `seed` and returns
// the worst deviation it observed, so callers decide the tolerance.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "boqsa/codec.hpp"
#include "boqsa/slot_attention.hpp"

namespace boqsa::test {

struct SlotInstance {
    SlotAttentionConfig config;
    std::size_t batch = 0;
    std::size_t positions = 0;
    Tensor<double> features;  // [B, N, input_dim]
    Tensor<double> init;      // [B, K, D]
};

inline SlotInstance random_slot_instance(std::uint64_t seed, GradientRegime regime,
                                         InitKind init = InitKind::learnable_query) {
    Rng rng(mix_seed(seed, 0x5a));
    SlotInstance s;
    s.config.num_slots = 2 + rng.below(4);
    s.config.slot_dim = 4 + rng.below(5);
    s.config.input_dim = 3 + rng.below(5);
    s.config.mlp_hidden = 8;
    s.config.iterations = 1 + rng.below(3);
    s.config.init = init;
    s.config.regime = regime;
    s.batch = 1 + rng.below(3);
    s.positions = 4 + rng.below(13);
    std::vector<double> f(s.batch * s.positions * s.config.input_dim);
    for (auto& v : f) v = rng.uniform(-2.0, 2.0);
    s.features = Tensor<double>::from_data({s.batch, s.positions, s.config.input_dim}, std::move(f));
    std::vector<double> i(s.batch * s.config.num_slots * s.config.slot_dim);
    for (auto& v : i) v = rng.normal();
    s.init = Tensor<double>::from_data({s.batch, s.config.num_slots, s.config.slot_dim}, std::move(i));
    return s;
}

/// max |sum_k A[b, n, k] - 1| of the final attention matrix.
inline double attention_row_error(std::uint64_t seed, GradientRegime regime = GradientRegime::full_unroll) {
    const SlotInstance s = random_slot_instance(seed, regime);
    Rng rng(seed);
    const SlotAttention<double> sa(s.config, rng);
    const SlotState<double> out = sa.run_from(s.features, s.init);
    const std::size_t k = s.config.num_slots;
    double worst = 0.0;
    for (std::size_t row = 0; row < s.batch * s.positions; ++row) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double a = out.attention.at(row * k + j);
            if (a < 0.0) return 1.0;
            total += a;
        }
        worst = std::max(worst, std::abs(total - 1.0));
    }
    return worst;
}

/// Permutes the initial slots and returns the worst mismatch between the
/// permuted output and the output of the permuted input (slots and
/// attention columns).
inline double permutation_error(std::uint64_t seed, GradientRegime regime) {
    const SlotInstance s = random_slot_instance(seed, regime);
    Rng rng(seed);
    const SlotAttention<double> sa(s.config, rng);
    const std::size_t b = s.batch, k = s.config.num_slots, d = s.config.slot_dim, n = s.positions;
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle(mix_seed(seed, 7));
    for (std::size_t i = k - 1; i > 0; --i) std::swap(perm[i], perm[shuffle.below(i + 1)]);

    std::vector<double> permuted(s.init.numel());
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t e = 0; e < d; ++e)
                permuted[(bi * k + j) * d + e] = s.init.at((bi * k + perm[j]) * d + e);
    const auto base = sa.run_from(s.features, s.init);
    const auto moved = sa.run_from(s.features, Tensor<double>::from_data(s.init.shape(), permuted));

    double worst = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t e = 0; e < d; ++e) {
                worst = std::max(worst, std::abs(moved.slots.at((bi * k + j) * d + e) -
                                                 base.slots.at((bi * k + perm[j]) * d + e)));
            }
            for (std::size_t p = 0; p < n; ++p) {
                worst = std::max(worst, std::abs(moved.attention.at((bi * n + p) * k + j) -
                                                 base.attention.at((bi * n + p) * k + perm[j])));
            }
        }
    }
    return worst;
}

/// Random 8x8 decoder and slots; worst deviation of the per-pixel masks from
/// a probability vector (negative entries count as their magnitude).
inline double mask_simplex_error(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6d));
    MixtureDecoderConfig config;
    config.channels = 4 + rng.below(5);
    config.upsample_layers = 1 + rng.below(2);
    config.hidden_layers = config.upsample_layers + rng.below(2);
    const std::size_t image = 8, d = 3 + rng.below(6), k = 1 + rng.below(5), b = 1 + rng.below(2);
    const MixtureDecoder<double> decoder(config, d, image, rng);
    std::vector<double> slots(b * k * d);
    for (auto& v : slots) v = 2.0 * rng.normal();
    const auto out = decoder(Tensor<double>::from_data({b, k, d}, std::move(slots)));
    const std::size_t pixels = image * image;
    double worst = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t p = 0; p < pixels; ++p) {
            double total = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double m = out.masks.at((bi * k + j) * pixels + p);
                if (m < 0.0) worst = std::max(worst, -m);
                total += m;
            }
            worst = std::max(worst, std::abs(total - 1.0));
        }
    }
    return worst;
}

struct RegimeIdentities {
    bool straight_through_bit_exact = false;
    double bo_init_gradient_error = 0.0;   // |dL/dqueries - sum_b dL/d(final input)|, max entry
    double detached_init_gradient = 0.0;   // max |dL/dqueries| under the detached regime
    double forward_spread = 0.0;           // max slot difference across the three regimes
};

/// Algorithm identities of the three gradient regimes on one random
/// instance with learnable-query initialization.
inline RegimeIdentities regime_identities(std::uint64_t seed) {
    RegimeIdentities r;
    const auto build = [&](GradientRegime regime) {
        const SlotInstance s = random_slot_instance(seed, regime);
        Rng rng(seed);
        return std::pair{s, SlotAttention<double>(s.config, rng)};
    };
    const auto loss_of = [](const Tensor<double>& slots, std::uint64_t salt) {
        Rng rng(salt);
        std::vector<double> w(slots.numel());
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        return sum(mul(square(slots), Tensor<double>::from_data(slots.shape(), std::move(w))));
    };
    const auto queries_of = [](const SlotAttention<double>& sa) {
        return std::get<LearnableQuery<double>>(sa.init).queries;
    };

    // straight_through(value, ref) forwards `value` exactly.
    {
        Rng rng(mix_seed(seed, 1));
        std::vector<double> v(24), w(24);
        for (auto& x : v) x = rng.normal();
        for (auto& x : w) x = rng.normal();
        const auto value = Tensor<double>::from_data({2, 3, 4}, v);
        const auto ref = Tensor<double>::from_data({2, 3, 4}, w, true);
        const auto st = straight_through(value, ref);
        r.straight_through_bit_exact = std::equal(st.data().begin(), st.data().end(), value.data().begin());
    }

    std::vector<Tensor<double>> slots;
    for (const GradientRegime regime : {GradientRegime::full_unroll, GradientRegime::detached_inner,
                                        GradientRegime::bilevel_straight_through}) {
        auto [s, sa] = build(regime);
        Rng rng(mix_seed(seed, 2));
        const SlotState<double> state = sa.run(s.features, std::nullopt, rng);
        slots.push_back(state.slots);
        const Tensor<double> loss = loss_of(state.slots, seed);
        Tensor<double> queries = queries_of(sa);
        queries.zero_grad();
        backward(loss);
        if (regime == GradientRegime::detached_inner) {
            for (double g : queries.grad()) r.detached_init_gradient = std::max(r.detached_init_gradient, std::abs(g));
        }
        if (regime == GradientRegime::bilevel_straight_through) {
            // Upstream gradient at the final step's slot input, recomputed
            // on a fresh leaf holding the same values.
            const std::vector<double> init_grad(queries.grad().begin(), queries.grad().end());
            NamedTensors<double> params;
            sa.collect("sa", params);
            for (auto& [name, p] : params) p.zero_grad();
            Tensor<double> leaf = state.final_input.clone();
            leaf.set_requires_grad(true);
            backward(loss_of(sa.attention_step(leaf, s.features).slots, seed));
            const std::size_t b = s.batch, kd = s.config.num_slots * s.config.slot_dim;
            for (std::size_t e = 0; e < kd; ++e) {
                double upstream = 0.0;
                for (std::size_t bi = 0; bi < b; ++bi) upstream += leaf.grad()[bi * kd + e];
                r.bo_init_gradient_error = std::max(r.bo_init_gradient_error, std::abs(init_grad[e] - upstream));
            }
            // The retained gradient of the straight-through output agrees as well.
            for (std::size_t e = 0; e < b * kd; ++e) {
                r.bo_init_gradient_error = std::max(
                    r.bo_init_gradient_error, std::abs(state.final_input.grad()[e] - leaf.grad()[e]));
            }
        }
    }
    for (std::size_t i = 1; i < slots.size(); ++i) {
        for (std::size_t e = 0; e < slots[0].numel(); ++e)
            r.forward_spread = std::max(r.forward_spread, std::abs(slots[i].at(e) - slots[0].at(e)));
    }
    return r;
}

}  // namespace boqsa::test
