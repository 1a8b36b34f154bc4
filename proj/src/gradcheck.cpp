#include "boqsa/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "boqsa/model.hpp"

namespace boqsa {

namespace {

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (limit == 0 || limit >= n) return idx;
    for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GradcheckResult gradcheck(const std::string& name, const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    GradcheckResult result;
    result.name = name;
    result.tolerance = options.tolerance;
    Rng rng(mix_seed(options.seed, 0x6763));

    for (auto& x : inputs) x.set_requires_grad(true);
    Tensor<double> projection;
    const auto objective = [&]() {
        const Tensor<double> y = fn(inputs);
        if (!projection.defined()) {
            std::vector<double> p(y.numel());
            for (auto& v : p) v = rng.uniform(-1.0, 1.0);
            projection = Tensor<double>::from_data(y.shape(), std::move(p));
        }
        return sum(mul(y, projection));
    };

    for (auto& x : inputs) x.zero_grad();
    backward(objective());
    std::vector<std::vector<double>> analytic;
    for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

    NoGradGuard no_grad;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto values = inputs[i].mutable_data();
        const auto entries = pick_entries(values.size(), options.max_entries, rng);
        std::vector<double> numeric;
        double scale = 0.0;
        std::vector<std::size_t> used;
        for (std::size_t e : entries) {
            const double original = values[e];
            const auto probe = [&](double x, std::vector<bool>* pattern) {
                values[e] = x;
                ReluPatternRecorder recorder;
                const double y = objective().item();
                *pattern = recorder.pattern();
                return y;
            };
            std::vector<bool> up_pattern, down_pattern;
            const double up = probe(original + options.step, &up_pattern);
            const double down = probe(original - options.step, &down_pattern);
            values[e] = original;
            if (up_pattern != down_pattern) {
                ++result.skipped;
                continue;
            }
            used.push_back(e);
            numeric.push_back((up - down) / (2.0 * options.step));
            scale = std::max({scale, std::abs(numeric.back()), std::abs(analytic[i][e])});
        }
        for (std::size_t j = 0; j < used.size(); ++j) {
            const double diff = std::abs(numeric[j] - analytic[i][used[j]]);
            result.max_error = std::max(result.max_error, diff / std::max(scale, options.scale_floor));
        }
        result.entries += used.size();
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

namespace {

Tensor<double> randn(Shape shape, Rng& rng, double lo_abs = 0.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = rng.normal();
        if (std::abs(x) < lo_abs) x = x < 0 ? x - lo_abs : x + lo_abs;
    }
    return Tensor<double>::from_data(std::move(shape), std::move(v));
}

Tensor<double> uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from_data(std::move(shape), std::move(v));
}

using Inputs = std::vector<Tensor<double>>;

ModelConfig pipeline_config(InitKind init, GradientRegime regime, std::size_t iterations) {
    ModelConfig c;
    c.image_size = 8;
    c.encoder.channels = 6;
    c.encoder.layers = 2;
    c.slots.num_slots = 3;
    c.slots.slot_dim = 8;
    c.slots.input_dim = 6;
    c.slots.mlp_hidden = 12;
    c.slots.iterations = iterations;
    c.slots.init = init;
    c.slots.regime = regime;
    c.decoder.channels = 5;
    c.decoder.upsample_layers = 2;
    c.decoder.hidden_layers = 3;
    return c;
}

GradcheckResult check_pipeline(const std::string& name, const ModelConfig& config, std::uint64_t seed) {
    const Model<double> model(config, seed);
    Rng data_rng(mix_seed(seed, 77));
    const Tensor<double> images = uniform({2, 3, 8, 8}, data_rng, 0.0, 1.0);
    Inputs params;
    for (auto& [n, t] : model.parameters()) params.push_back(t);
    GradcheckOptions opts;
    opts.tolerance = 1e-3;
    opts.max_entries = 64;
    opts.seed = seed;
    return gradcheck(
        name,
        [&](const Inputs&) {
            Rng rng(mix_seed(seed, 5));
            return model.forward(images, std::nullopt, rng).loss;
        },
        params, opts);
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
    std::vector<GradcheckResult> out;
    Rng rng(mix_seed(seed, 0x5355));
    GradcheckOptions opts;
    opts.seed = seed;
    const auto unary = [&](const std::string& name, auto op, Tensor<double> x) {
        out.push_back(gradcheck(name, [op](const Inputs& in) { return op(in[0]); }, {x}, opts));
    };
    const auto binary = [&](const std::string& name, auto op, Tensor<double> a, Tensor<double> b) {
        out.push_back(gradcheck(name, [op](const Inputs& in) { return op(in[0], in[1]); }, {a, b}, opts));
    };

    binary("add (broadcast)", [](auto& a, auto& b) { return add(a, b); }, randn({3, 4}, rng), randn({4}, rng));
    binary("sub (broadcast)", [](auto& a, auto& b) { return sub(a, b); }, randn({2, 1, 4}, rng), randn({3, 1}, rng));
    binary("mul (broadcast)", [](auto& a, auto& b) { return mul(a, b); }, randn({2, 3, 4}, rng), randn({1, 3, 1}, rng));
    binary("div", [](auto& a, auto& b) { return div(a, b); }, randn({3, 4}, rng), uniform({3, 4}, rng, 0.5, 2.0));
    unary("scale", [](auto& x) { return scale(x, 2.5); }, randn({5}, rng));
    unary("add_scalar", [](auto& x) { return add_scalar(x, -0.3); }, randn({5}, rng));
    unary("neg", [](auto& x) { return neg(x); }, randn({5}, rng));
    unary("exp", [](auto& x) { return exp(x); }, randn({6}, rng));
    unary("log", [](auto& x) { return log(x); }, uniform({6}, rng, 0.5, 3.0));
    unary("relu", [](auto& x) { return relu(x); }, randn({12}, rng, 0.05));
    unary("sigmoid", [](auto& x) { return sigmoid(x); }, randn({6}, rng));
    unary("tanh", [](auto& x) { return tanh(x); }, randn({6}, rng));
    unary("square", [](auto& x) { return square(x); }, randn({6}, rng));
    unary("sum", [](auto& x) { return sum(x); }, randn({3, 4}, rng));
    unary("sum(axis)", [](auto& x) { return sum(x, 1, true); }, randn({2, 3, 4}, rng));
    unary("mean", [](auto& x) { return mean(x); }, randn({3, 4}, rng));
    unary("mean(axis)", [](auto& x) { return mean(x, -1); }, randn({2, 3, 4}, rng));
    unary("reshape", [](auto& x) { return reshape(x, {4, 3}); }, randn({2, 6}, rng));
    unary("permute", [](auto& x) { return permute(x, {2, 0, 1}); }, randn({2, 3, 4}, rng));
    unary("transpose", [](auto& x) { return transpose(x, 0, 2); }, randn({2, 3, 4}, rng));
    unary("expand", [](auto& x) { return expand(x, {2, 3, 4}); }, randn({3, 1}, rng));
    binary("concat", [](auto& a, auto& b) { return concat<double>({a, b}, 1); }, randn({2, 2, 3}, rng),
           randn({2, 4, 3}, rng));
    unary("slice", [](auto& x) { return slice(x, 1, 1, 3); }, randn({2, 4, 3}, rng));
    binary("matmul (batched, broadcast)", [](auto& a, auto& b) { return matmul(a, b); }, randn({2, 3, 4}, rng),
           randn({4, 5}, rng));
    out.push_back(gradcheck(
        "linear", [](const Inputs& in) { return linear(in[0], in[1], in[2]); },
        {randn({2, 3, 4}, rng), randn({5, 4}, rng), randn({5}, rng)}, opts));
    unary("softmax", [](auto& x) { return softmax(x, 1); }, randn({2, 4, 3}, rng));
    out.push_back(gradcheck(
        "layernorm", [](const Inputs& in) { return layernorm(in[0], in[1], in[2]); },
        {randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)}, opts));
    out.push_back(gradcheck(
        "conv2d (stride 1, pad 2)",
        [](const Inputs& in) { return conv2d(in[0], in[1], in[2], {1, 2, 0}); },
        {randn({2, 2, 5, 5}, rng), randn({3, 2, 5, 5}, rng), randn({3}, rng)}, opts));
    out.push_back(gradcheck(
        "conv2d (stride 2, pad 1)",
        [](const Inputs& in) { return conv2d(in[0], in[1], in[2], {2, 1, 0}); },
        {randn({1, 2, 6, 6}, rng), randn({2, 2, 3, 3}, rng), randn({2}, rng)}, opts));
    out.push_back(gradcheck(
        "conv_transpose2d (stride 2, pad 2, out pad 1)",
        [](const Inputs& in) { return conv_transpose2d(in[0], in[1], in[2], {2, 2, 1}); },
        {randn({2, 2, 3, 3}, rng), randn({2, 3, 5, 5}, rng), randn({3}, rng)}, opts));
    out.push_back(gradcheck(
        "conv_transpose2d (stride 1, pad 1)",
        [](const Inputs& in) { return conv_transpose2d(in[0], in[1], in[2], {1, 1, 0}); },
        {randn({1, 3, 4, 4}, rng), randn({3, 2, 3, 3}, rng), randn({2}, rng)}, opts));
    binary("mse_loss", [](auto& a, auto& b) { return mse_loss(a, b); }, randn({2, 3, 4}, rng), randn({2, 3, 4}, rng));

    {
        Rng init(mix_seed(seed, 11));
        const GruCell<double> cell(4, 5, init);
        out.push_back(gradcheck(
            "gru_step", [&cell](const Inputs& in) { return gru_step(in[0], in[1], cell); },
            {randn({3, 5}, rng), randn({3, 4}, rng), cell.weight_ih, cell.weight_hh, cell.bias_ih, cell.bias_hh}, opts));
    }
    {
        SlotAttentionConfig config;
        config.num_slots = 3;
        config.slot_dim = 6;
        config.input_dim = 5;
        config.mlp_hidden = 8;
        Rng init(mix_seed(seed, 12));
        const SlotAttention<double> sa(config, init);
        Inputs in{randn({2, 3, 6}, rng), randn({2, 7, 5}, rng)};
        NamedTensors<double> params;
        sa.collect("sa", params);
        for (auto& [n, t] : params) {
            if (n.find(".init.") == std::string::npos) in.push_back(t);
        }
        out.push_back(gradcheck(
            "slot attention step", [&sa](const Inputs& x) { return sa.attention_step(x[0], x[1]).slots; }, in, opts));
    }

    out.push_back(check_pipeline("pipeline 8x8, T=1, query init, bi-level",
                                 pipeline_config(InitKind::learnable_query, GradientRegime::bilevel_straight_through, 1),
                                 seed));
    out.push_back(check_pipeline("pipeline 8x8, T=1, gaussian init, full unroll",
                                 pipeline_config(InitKind::gaussian_sample, GradientRegime::full_unroll, 1), seed));
    out.push_back(check_pipeline("pipeline 8x8, T=3, query init, full unroll",
                                 pipeline_config(InitKind::learnable_query, GradientRegime::full_unroll, 3), seed));
    return out;
}

}  // namespace boqsa
