#include "boqsa/metrics.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

#include "boqsa/png_io.hpp"

namespace boqsa {

template <typename T>
Labels argmax_labels(const Tensor<T>& masks, std::size_t b) {
    if (masks.rank() < 4) throw DimensionError("argmax_labels expects [B, K, (1,) H, W], got " + shape_str(masks.shape()));
    const std::size_t batch = masks.dim(0), k = masks.dim(1);
    if (b >= batch) throw DimensionError("argmax_labels: image index out of range");
    const std::size_t pixels = masks.numel() / (batch * k);
    const T* base = masks.data().data() + b * k * pixels;
    Labels labels(pixels, 0);
    for (std::size_t p = 0; p < pixels; ++p) {
        T best = base[p];
        for (std::size_t s = 1; s < k; ++s) {
            if (base[s * pixels + p] > best) {
                best = base[s * pixels + p];
                labels[p] = static_cast<int>(s);
            }
        }
    }
    return labels;
}

Labels to_labels(std::span<const std::uint8_t> values) { return Labels(values.begin(), values.end()); }

namespace {

double pairs(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw DimensionError("adjusted_rand_index: labelings differ in length");
    if (a.size() < 2) throw DimensionError("adjusted_rand_index needs at least 2 elements");

    std::map<std::pair<int, int>, std::int64_t> table;
    std::map<int, std::int64_t> rows, cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++table[{a[i], b[i]}];
        ++rows[a[i]];
        ++cols[b[i]];
    }
    double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
    for (const auto& [key, n] : table) index += pairs(static_cast<double>(n));
    for (const auto& [key, n] : rows) sum_rows += pairs(static_cast<double>(n));
    for (const auto& [key, n] : cols) sum_cols += pairs(static_cast<double>(n));

    // (index - expected) / (max - expected) scaled by 2 * total: every term is
    // an integer, exact in double while the products stay below 2^53.
    const double total = pairs(static_cast<double>(a.size()));
    const double numerator = 2.0 * (index * total - sum_rows * sum_cols);
    const double denominator = (sum_rows + sum_cols) * total - 2.0 * sum_rows * sum_cols;
    if (denominator == 0.0) return 1.0;
    return numerator / denominator;
}

std::optional<double> ari_fg(std::span<const int> pred, std::span<const int> gt) {
    if (pred.size() != gt.size()) throw DimensionError("ari_fg: prediction and ground truth differ in size");
    std::vector<int> p, g;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] != 0) {
            p.push_back(pred[i]);
            g.push_back(gt[i]);
        }
    }
    if (g.size() < 2) return std::nullopt;
    return adjusted_rand_index(p, g);
}

std::optional<Covering> msc_fg(std::span<const int> pred, std::span<const int> gt) {
    if (pred.size() != gt.size()) throw DimensionError("msc_fg: prediction and ground truth differ in size");
    std::map<int, std::int64_t> gt_size, pred_size;
    std::map<std::pair<int, int>, std::int64_t> overlap;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        ++pred_size[pred[i]];
        if (gt[i] == 0) continue;
        ++gt_size[gt[i]];
        ++overlap[{gt[i], pred[i]}];
    }
    if (gt_size.empty()) return std::nullopt;

    double weighted = 0.0, unweighted = 0.0, total = 0.0;
    for (const auto& [g, size] : gt_size) {
        double best = 0.0;
        for (const auto& [p, psize] : pred_size) {
            auto it = overlap.find({g, p});
            if (it == overlap.end()) continue;
            const double inter = static_cast<double>(it->second);
            best = std::max(best, inter / static_cast<double>(size + psize - it->second));
        }
        weighted += static_cast<double>(size) * best;
        unweighted += best;
        total += static_cast<double>(size);
    }
    return Covering{weighted / total, unweighted / static_cast<double>(gt_size.size())};
}

std::size_t max_intersection_slot(std::span<const int> pred, std::size_t num_slots,
                                  std::span<const std::uint8_t> target) {
    if (pred.size() != target.size()) throw DimensionError("max_intersection_slot: size mismatch");
    if (num_slots == 0) throw DimensionError("max_intersection_slot needs at least one slot");
    std::vector<std::size_t> inter(num_slots, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= num_slots) {
            throw DimensionError("max_intersection_slot: label " + std::to_string(pred[i]) + " outside [0, K)");
        }
        if (target[i]) ++inter[static_cast<std::size_t>(pred[i])];
    }
    std::size_t best = 0;
    for (std::size_t s = 1; s < num_slots; ++s) {
        if (inter[s] > inter[best]) best = s;
    }
    return best;
}

std::optional<ForegroundScore> fg_extraction(std::span<const int> pred, std::size_t num_slots,
                                             std::span<const std::uint8_t> gt_foreground) {
    if (num_slots < 2) throw DimensionError("fg_extraction needs K >= 2");
    const std::size_t slot = max_intersection_slot(pred, num_slots, gt_foreground);
    std::size_t inter = 0, p_size = 0, g_size = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == static_cast<int>(slot);
        const bool g = gt_foreground[i] != 0;
        p_size += p;
        g_size += g;
        inter += p && g;
    }
    if (g_size == 0) return std::nullopt;
    ForegroundScore score;
    score.slot = slot;
    score.iou = static_cast<double>(inter) / static_cast<double>(p_size + g_size - inter);
    score.dice = 2.0 * static_cast<double>(inter) / static_cast<double>(p_size + g_size);
    return score;
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd out;
    out.count = values.size();
    if (values.empty()) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

MetricSummary MetricReport::summary() const {
    MetricSummary s;
    s.images = rows.size();
    std::vector<double> ari, msc, mscu, iou, dice, mse, slate;
    for (const auto& r : rows) {
        if (r.ari_fg) ari.push_back(*r.ari_fg); else ++s.skipped_ari;
        if (r.msc_fg) {
            msc.push_back(*r.msc_fg);
            mscu.push_back(r.msc_fg_unweighted.value_or(0.0));
        } else {
            ++s.skipped_msc;
        }
        if (r.iou) {
            iou.push_back(*r.iou);
            dice.push_back(r.dice.value_or(0.0));
        } else {
            ++s.skipped_fg;
        }
        mse.push_back(r.mse_per_pixel);
        slate.push_back(r.mse_slate_total);
    }
    s.ari_fg = mean_std(ari);
    s.msc_fg = mean_std(msc);
    s.msc_fg_unweighted = mean_std(mscu);
    s.iou = mean_std(iou);
    s.dice = mean_std(dice);
    s.mse_per_pixel = mean_std(mse);
    s.mse_slate_total = mean_std(slate);
    return s;
}

namespace {

void put(std::ostream& out, const std::optional<double>& v) {
    if (v) out << *v;
}

}  // namespace

void MetricReport::write_csv(std::ostream& out) const {
    const auto old_precision = out.precision(10);
    out << "tag,row,num_instances,ari_fg,msc_fg,msc_fg_unweighted,iou,dice,mse_per_pixel,mse_slate_total\n";
    for (const auto& r : rows) {
        out << tag << ',' << r.index << ',' << r.num_instances << ',';
        put(out, r.ari_fg);
        out << ',';
        put(out, r.msc_fg);
        out << ',';
        put(out, r.msc_fg_unweighted);
        out << ',';
        put(out, r.iou);
        out << ',';
        put(out, r.dice);
        out << ',' << r.mse_per_pixel << ',' << r.mse_slate_total << '\n';
    }
    const MetricSummary s = summary();
    out << tag << ",mean," << s.images << ',' << s.ari_fg.mean << ',' << s.msc_fg.mean << ','
        << s.msc_fg_unweighted.mean << ',' << s.iou.mean << ',' << s.dice.mean << ',' << s.mse_per_pixel.mean << ','
        << s.mse_slate_total.mean << '\n';
    out << tag << ",stddev," << s.images << ',' << s.ari_fg.stddev << ',' << s.msc_fg.stddev << ','
        << s.msc_fg_unweighted.stddev << ',' << s.iou.stddev << ',' << s.dice.stddev << ','
        << s.mse_per_pixel.stddev << ',' << s.mse_slate_total.stddev << '\n';
    out << "# skipped: ari_fg=" << s.skipped_ari << " msc_fg=" << s.skipped_msc << " fg_extraction=" << s.skipped_fg
        << '\n';
    out.precision(old_precision);
}

void MetricReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    write_csv(out);
    if (!out) throw IoError("cannot write " + path);
}

template Labels argmax_labels<float>(const Tensor<float>&, std::size_t);
template Labels argmax_labels<double>(const Tensor<double>&, std::size_t);

}  // namespace boqsa
