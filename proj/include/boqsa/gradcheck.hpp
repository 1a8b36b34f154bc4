#pragma once

// Finite-difference verification of analytic gradients (double precision).

#include <functional>
#include <string>
#include <vector>

#include "boqsa/nn.hpp"

namespace boqsa {

struct GradcheckResult {
    std::string name;
    double max_error = 0.0;   // worst entry, relative to the largest gradient magnitude of its input
    double tolerance = 0.0;
    std::size_t entries = 0;  // finite differences compared
    std::size_t skipped = 0;  // entries whose +-h probes straddle a relu kink
    double seconds = 0.0;

    bool passed() const { return entries > 0 && max_error < tolerance; }
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradcheckOptions {
    double step = 1e-4;                // central-difference h
    double tolerance = 1e-4;
    std::size_t max_entries = 0;       // per input; 0 checks every entry
    std::uint64_t seed = 0;            // entry subsampling and output projection
    double scale_floor = 1e-6;         // smallest gradient scale errors are measured against
};

/// Compares d(sum(f(inputs) * P))/d(inputs) by backprop against central
/// differences, P a fixed random projection of f's output. The error of an
/// entry is |analytic - numeric| / max(max|analytic|, max|numeric|, floor)
/// over the entries compared in that input. Entries whose two probes see
/// different relu sign patterns are not differentiable across [x - h, x + h]
/// and are skipped (and counted).
GradcheckResult gradcheck(const std::string& name, const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& options = {});

/// Every differentiable op plus the end-to-end 8x8 pipeline at T = 1.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace boqsa
