#pragma once

// Independent reference computations for the segmentation metrics.

#include <cstddef>
#include <span>

namespace boqsa::test {

/// Adjusted Rand index by explicit enumeration of every element pair.
inline double brute_force_ari(std::span<const int> a, std::span<const int> b) {
    const std::size_t n = a.size();
    double both = 0.0, same_a = 0.0, same_b = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool sa = a[i] == a[j], sb = b[i] == b[j];
            both += sa && sb;
            same_a += sa;
            same_b += sb;
            total += 1.0;
        }
    }
    const double expected = same_a * same_b / total;
    const double max_index = 0.5 * (same_a + same_b);
    if (max_index == expected) return 1.0;
    return (both - expected) / (max_index - expected);
}

}  // namespace boqsa::test
