#include <doctest.h>

#include <cmath>

#include "boqsa/slot_attention.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace boqsa;
using boqsa::test::random_tensor;
using T = Tensor<double>;

namespace {

void set_identity(T& w) {
    auto v = w.mutable_data();
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = r == c ? 1.0 : 0.0;
}

SlotAttentionConfig small_config(GradientRegime regime, InitKind init = InitKind::learnable_query) {
    SlotAttentionConfig c;
    c.num_slots = 3;
    c.slot_dim = 6;
    c.input_dim = 5;
    c.mlp_hidden = 8;
    c.iterations = 3;
    c.regime = regime;
    c.init = init;
    c.sigma_steps = 100;
    return c;
}

}  // namespace

TEST_CASE("weighted-mean update matches the formulas on a hand-sized instance") {
    SlotAttentionConfig c;
    c.num_slots = 2;
    c.slot_dim = 2;
    c.input_dim = 2;
    c.bypass_layernorm = true;
    c.eps = 1e-8;
    Rng rng(1);
    SlotAttention<double> sa(c, rng);
    set_identity(sa.to_q.weight);
    set_identity(sa.to_k.weight);
    set_identity(sa.to_v.weight);

    const std::vector<double> x{0.5, -1.0, 2.0, 0.25, -0.75, 1.5};  // N = 3 rows
    const std::vector<double> s{1.0, 0.0, -0.5, 2.0};                // K = 2 rows
    const auto step = sa.attention_step(T::from_data({1, 2, 2}, s), T::from_data({1, 3, 2}, x));

    double a[3][2];
    for (int n = 0; n < 3; ++n) {
        double logits[2], z = 0.0;
        for (int k = 0; k < 2; ++k) {
            logits[k] = (x[n * 2] * s[k * 2] + x[n * 2 + 1] * s[k * 2 + 1]) / std::sqrt(2.0);
            z += std::exp(logits[k]);
        }
        for (int k = 0; k < 2; ++k) a[n][k] = std::exp(logits[k]) / z;
    }
    for (int k = 0; k < 2; ++k) {
        double column = c.eps;
        for (int n = 0; n < 3; ++n) column += a[n][k];
        for (int d = 0; d < 2; ++d) {
            double u = 0.0;
            for (int n = 0; n < 3; ++n) u += a[n][k] / column * x[n * 2 + d];
            CHECK(step.updates.at(k * 2 + d) == doctest::Approx(u).epsilon(1e-13));
        }
        for (int n = 0; n < 3; ++n) CHECK(step.attention.at(n * 2 + k) == doctest::Approx(a[n][k]).epsilon(1e-13));
    }
}

TEST_CASE("a single slot attends to everything and averages the values") {
    SlotAttentionConfig c = small_config(GradientRegime::full_unroll);
    c.num_slots = 1;
    Rng rng(2);
    const SlotAttention<double> sa(c, rng);
    const T features = random_tensor({2, 7, 5}, rng);
    const auto proj = sa.project_inputs(features);
    const auto step = sa.attention_step(random_tensor({2, 1, 6}, rng), proj);
    for (double v : step.attention.data()) CHECK(v == 1.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t d = 0; d < 6; ++d) {
            double m = 0.0;
            for (std::size_t n = 0; n < 7; ++n) m += proj.values.at((b * 7 + n) * 6 + d);
            m /= 7.0;
            CHECK(step.updates.at(b * 6 + d) == doctest::Approx(m).epsilon(1e-8));  // eps in the denominator
        }
}

TEST_CASE("sigma schedule") {
    CHECK(sigma_at(0, 1000) == 1.0);
    CHECK(sigma_at(1000, 1000) == 0.0);
    CHECK(sigma_at(5000, 1000) == 0.0);
    CHECK(sigma_at(500, 1000) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sigma_at(7, 0) == 0.0);
    for (std::size_t s = 1; s <= 1100; ++s) CHECK(sigma_at(s, 1000) <= sigma_at(s - 1, 1000));
}

TEST_CASE("learnable queries: exhausted perturbation returns the queries exactly") {
    Rng rng(3);
    const SlotAttention<double> sa(small_config(GradientRegime::bilevel_straight_through), rng);
    const T q = std::get<LearnableQuery<double>>(sa.init).queries;
    for (const std::optional<std::size_t> step : {std::optional<std::size_t>{100}, std::optional<std::size_t>{},
                                                  std::optional<std::size_t>{12345}}) {
        const T out = init_slots(sa.init, 3, 4, step, rng);
        REQUIRE(out.shape() == Shape{4, 3, 6});
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < q.numel(); ++i) CHECK(out.at(b * q.numel() + i) == q.at(i));
    }
}

TEST_CASE("learnable queries: perturbation variance at step 0 is sigma(0)^2 = 1") {
    Rng rng(4);
    const SlotAttention<double> sa(small_config(GradientRegime::bilevel_straight_through), rng);
    const T q = std::get<LearnableQuery<double>>(sa.init).queries;
    const T out = init_slots(sa.init, 3, 1000, std::optional<std::size_t>{0}, rng);  // 18000 draws
    double m = 0.0, v = 0.0;
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) m += out.at(i) - q.at(i % q.numel());
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = out.at(i) - q.at(i % q.numel()) - m;
        v += e * e;
    }
    v /= static_cast<double>(n - 1);
    CHECK(std::abs(v - 1.0) < 0.1);
    CHECK(std::abs(m) < 0.05);
}

TEST_CASE("gaussian init collapses onto mu as sigma vanishes") {
    Rng rng(5);
    SlotAttention<double> sa(small_config(GradientRegime::full_unroll, InitKind::gaussian_sample), rng);
    auto& g = std::get<GaussianSample<double>>(sa.init);
    for (auto& v : g.log_sigma.mutable_data()) v = -700.0;
    const T out = init_slots(sa.init, 3, 2, std::optional<std::size_t>{0}, rng);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(g.mu.at(i % 6)).epsilon(1e-12));

    // Fresh samples per slot and image.
    for (auto& v : g.log_sigma.mutable_data()) v = 0.0;
    const T noisy = init_slots(sa.init, 3, 2, std::optional<std::size_t>{0}, rng);
    CHECK(noisy.at(0) != noisy.at(6));
    CHECK(noisy.at(0) != noisy.at(18));
}

TEST_CASE("regimes change gradients, never forward values") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = boqsa::test::regime_identities(seed);
        CAPTURE(seed);
        CHECK(r.straight_through_bit_exact);
        CHECK(r.bo_init_gradient_error <= 1e-10);
        CHECK(r.detached_init_gradient == 0.0);
        CHECK(r.forward_spread <= 1e-6);
    }
}

TEST_CASE("T = 1: full unroll and bi-level forward values are bit-identical") {
    SlotAttentionConfig a = small_config(GradientRegime::full_unroll);
    a.iterations = 1;
    SlotAttentionConfig b = a;
    b.regime = GradientRegime::bilevel_straight_through;
    Rng ra(6), rb(6);
    const SlotAttention<double> full(a, ra), bo(b, rb);
    Rng data(7);
    const T features = random_tensor({2, 9, 5}, data);
    Rng na(8), nb(8);
    const T x = full.run(features, 0, na).slots;
    const T y = bo.run(features, 0, nb).slots;
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST_CASE("full unroll sends gradient into the initializer") {
    Rng rng(9);
    const SlotAttention<double> sa(small_config(GradientRegime::full_unroll, InitKind::gaussian_sample), rng);
    const T features = random_tensor({2, 9, 5}, rng);
    backward(sum(square(sa.run(features, 0, rng).slots)));
    const auto& g = std::get<GaussianSample<double>>(sa.init);
    double norm = 0.0;
    for (double v : g.mu.grad()) norm += v * v;
    CHECK(norm > 0.0);
}

TEST_CASE("inner override replaces the detached inner solution") {
    Rng rng(10);
    const SlotAttention<double> sa(small_config(GradientRegime::bilevel_straight_through), rng);
    const T features = random_tensor({1, 9, 5}, rng);
    const T init = random_tensor({1, 3, 6}, rng);
    const T alt = random_tensor({1, 3, 6}, rng);
    RunOptions<double> opts;
    opts.inner_override = alt;
    const auto state = sa.run_from(features, init, opts);
    const T expected = sa.attention_step(alt, features).slots;
    CHECK(std::equal(state.slots.data().begin(), state.slots.data().end(), expected.data().begin()));
    CHECK(std::equal(state.final_input.data().begin(), state.final_input.data().end(), alt.data().begin()));
}

TEST_CASE("attention rows and permutation equivariance on random instances") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        CAPTURE(seed);
        CHECK(boqsa::test::attention_row_error(seed) < 1e-5);
        for (const GradientRegime regime : {GradientRegime::full_unroll, GradientRegime::detached_inner,
                                            GradientRegime::bilevel_straight_through}) {
            CHECK(boqsa::test::permutation_error(seed, regime) < 1e-5);
        }
    }
}

TEST_CASE("slot attention gradients at T = 1 against finite differences") {
    SlotAttentionConfig c = small_config(GradientRegime::full_unroll);
    c.iterations = 1;
    c.num_slots = 2;
    c.slot_dim = 4;
    c.input_dim = 3;
    c.mlp_hidden = 5;
    Rng rng(11);
    SlotAttention<double> sa(c, rng);
    T features = random_tensor({1, 4, 3}, rng);
    const T proj = random_tensor({1, 2, 4}, rng);
    NamedTensors<double> params;
    sa.collect("sa", params);
    std::vector<T*> inputs{&features};
    for (auto& [name, p] : params) inputs.push_back(&p);
    const double err = boqsa::test::gradient_error(
        [&] {
            Rng r(12);
            return sum(mul(sa.run(features, std::nullopt, r).slots, proj));
        },
        inputs);
    CHECK(err < 1e-3);
}

TEST_CASE("configuration validation and names") {
    SlotAttentionConfig c;
    c.num_slots = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.iterations = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.eps = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(parse_gradient_regime("bilevel") == GradientRegime::bilevel_straight_through);
    CHECK(parse_init_kind(to_string(InitKind::gaussian_sample)) == InitKind::gaussian_sample);
    CHECK_THROWS_AS(parse_gradient_regime("unrolled"), std::invalid_argument);
    Rng rng(13);
    const SlotAttention<double> sa(small_config(GradientRegime::full_unroll), rng);
    CHECK_THROWS_AS(sa.project_inputs(T::zeros({1, 4, 7})), DimensionError);
}
