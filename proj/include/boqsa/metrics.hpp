#pragma once

// Segmentation and reconstruction scores for mixture-decoder outputs.
//
// All segmentation metrics work on dense per-pixel labels. Predicted labels
// are the per-pixel argmax over slot masks; ground-truth labels follow the
// scene convention (0 = background, i >= 1 = instance).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "boqsa/tensor.hpp"

namespace boqsa {

using Labels = std::vector<int>;

/// Per-pixel argmax over K for image `b` of masks [B, K, 1, H, W] (or
/// [B, K, H, W]). Ties resolve to the lowest slot index.
template <typename T>
Labels argmax_labels(const Tensor<T>& masks, std::size_t b);

Labels to_labels(std::span<const std::uint8_t> values);

/// Hubert-Arabie adjusted Rand index between two labelings of the same
/// elements. When both labelings are a single cluster the index is defined
/// as 1. Throws DimensionError on a length mismatch or fewer than 2 elements.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

/// ARI restricted to ground-truth foreground pixels (gt != 0). nullopt when
/// fewer than two foreground pixels exist.
std::optional<double> ari_fg(std::span<const int> pred, std::span<const int> gt);

struct Covering {
    double weighted = 0.0;    // instance IoUs weighted by instance size
    double unweighted = 0.0;  // plain mean over instances
};

/// Segmentation covering of the GT instances (labels >= 1) by the predicted
/// segments, IoU over the whole image. nullopt without GT instances.
std::optional<Covering> msc_fg(std::span<const int> pred, std::span<const int> gt);

/// Slot whose argmax region overlaps `target` (nonzero entries) most; ties go
/// to the lowest index.
std::size_t max_intersection_slot(std::span<const int> pred, std::size_t num_slots,
                                  std::span<const std::uint8_t> target);

struct ForegroundScore {
    std::size_t slot = 0;
    double iou = 0.0;
    double dice = 0.0;
};

/// Picks the slot overlapping the GT foreground most and scores it as the
/// predicted foreground. nullopt on an empty foreground.
std::optional<ForegroundScore> fg_extraction(std::span<const int> pred, std::size_t num_slots,
                                             std::span<const std::uint8_t> gt_foreground);

struct ImageMetrics {
    std::size_t index = 0;
    std::size_t num_instances = 0;
    std::optional<double> ari_fg;
    std::optional<double> msc_fg;
    std::optional<double> msc_fg_unweighted;
    std::optional<double> iou;
    std::optional<double> dice;
    double mse_per_pixel = 0.0;
    double mse_slate_total = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
    std::size_t count = 0;
};

MeanStd mean_std(std::span<const double> values);

struct MetricSummary {
    std::size_t images = 0;
    MeanStd ari_fg, msc_fg, msc_fg_unweighted, iou, dice, mse_per_pixel, mse_slate_total;
    // Images left out of a mean because the metric was undefined for them.
    std::size_t skipped_ari = 0;
    std::size_t skipped_msc = 0;
    std::size_t skipped_fg = 0;
};

struct MetricReport {
    std::string tag;
    std::vector<ImageMetrics> rows;

    MetricSummary summary() const;
    /// One row per image, then a `mean` and a `stddev` row over images.
    void write_csv(std::ostream& out) const;
    void write_csv(const std::string& path) const;
};

}  // namespace boqsa
