#pragma once

// Shared helpers for the unit tests: seeded random tensors and a plain
// central-difference gradient used as an oracle against backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "boqsa/ops.hpp"
#include "boqsa/random.hpp"

namespace boqsa::test {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from_data(std::move(shape), std::move(v), requires_grad);
}

/// d f / d x by central differences, evaluated entry by entry.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor<double>& x, double h = 1e-4) {
    NoGradGuard no_grad;
    auto values = x.mutable_data();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double keep = values[i];
        values[i] = keep + h;
        const double up = f();
        values[i] = keep - h;
        const double down = f();
        values[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

/// Compares backward() of the scalar `loss()` against central differences
/// for every input; returns the worst relative error.
inline double gradient_error(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>*> inputs,
                             double h = 1e-4) {
    for (auto* x : inputs) {
        x->set_requires_grad(true);
        x->zero_grad();
    }
    backward(loss());
    double worst = 0.0;
    for (auto* x : inputs) {
        const std::vector<double> analytic(x->grad().begin(), x->grad().end());
        const auto numeric = numeric_gradient([&] { return loss().item(); }, *x, h);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace boqsa::test
