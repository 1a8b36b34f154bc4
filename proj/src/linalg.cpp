// Matrix products, normalization and convolutions. GEMMs go through Eigen
// maps over the row-major storage.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "op_support.hpp"

namespace boqsa {

using detail::grad_sink;
using detail::ImplPtr;
using detail::make_result;
using detail::normalize_axis;
using detail::TensorImpl;

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;

// Offsets of each broadcast batch element into a and b.
struct BatchPlan {
    Shape batch;
    std::vector<std::size_t> offset_a, offset_b;
};

BatchPlan plan_batches(const Shape& a, const Shape& b, std::size_t mat_a, std::size_t mat_b) {
    Shape ba(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
    BatchPlan plan;
    plan.batch = broadcast_shapes(ba, bb);
    const std::size_t n = shape_numel(plan.batch);
    auto sa = detail::broadcast_strides(ba, plan.batch);
    auto sb = detail::broadcast_strides(bb, plan.batch);
    detail::BroadcastCursor cur(plan.batch, sa, sb);
    for (std::size_t i = 0; i < n; ++i, cur.advance()) {
        plan.offset_a.push_back(cur.a() * mat_a);
        plan.offset_b.push_back(cur.b() * mat_b);
    }
    return plan;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw DimensionError("matmul needs rank >= 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
    if (k != k2) throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    BatchPlan plan = plan_batches(a.shape(), b.shape(), m * k, k * n);
    Shape shape = plan.batch;
    shape.push_back(m);
    shape.push_back(n);
    std::vector<T> out(shape_numel(shape));
    const std::size_t batches = plan.offset_a.size();
    for (std::size_t i = 0; i < batches; ++i) {
        MapM<T> c(out.data() + i * m * n, m, n);
        c.noalias() = MapC<T>(a.data().data() + plan.offset_a[i], m, k) * MapC<T>(b.data().data() + plan.offset_b[i], k, n);
    }
    return make_result<T>(std::move(shape), std::move(out), {&a, &b}, "matmul",
                          [plan = std::move(plan), m, k, n](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* ga = grad_sink(p[0]);
                              T* gb = grad_sink(p[1]);
                              for (std::size_t i = 0; i < plan.offset_a.size(); ++i) {
                                  MapC<T> gc(o.grad.data() + i * m * n, m, n);
                                  if (ga) {
                                      MapM<T>(ga + plan.offset_a[i], m, k).noalias() +=
                                          gc * MapC<T>(p[1]->data.data() + plan.offset_b[i], k, n).transpose();
                                  }
                                  if (gb) {
                                      MapM<T>(gb + plan.offset_b[i], k, n).noalias() +=
                                          MapC<T>(p[0]->data.data() + plan.offset_a[i], m, k).transpose() * gc;
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t in = weight.dim(1), outf = weight.dim(0);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Shape shape = x.shape();
    shape.back() = outf;
    std::vector<T> out(rows * outf);
    MapM<T> y(out.data(), rows, outf);
    y.noalias() = MapC<T>(x.data().data(), rows, in) * MapC<T>(weight.data().data(), outf, in).transpose();
    if (bias.defined()) {
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outf);
    }
    return make_result<T>(std::move(shape), std::move(out), {&x, &weight, &bias}, "linear",
                          [rows, in, outf](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              MapC<T> gy(o.grad.data(), rows, outf);
                              if (T* gx = grad_sink(p[0])) {
                                  MapM<T>(gx, rows, in).noalias() += gy * MapC<T>(p[1]->data.data(), outf, in);
                              }
                              if (T* gw = grad_sink(p[1])) {
                                  MapM<T>(gw, outf, in).noalias() += gy.transpose() * MapC<T>(p[0]->data.data(), rows, in);
                              }
                              if (T* gbias = grad_sink(p[2])) {
                                  // Plain row order keeps the sum independent of buffer alignment.
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      const T* g = o.grad.data() + r * outf;
                                      for (std::size_t j = 0; j < outf; ++j) gbias[j] += g[j];
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    std::size_t outer = 1, extent = x.shape()[ax], inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= x.shape()[i];
    for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[i];
    std::vector<T> out(x.numel());
    const T* px = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * extent * inner + i;
            T peak = px[base];
            for (std::size_t e = 1; e < extent; ++e) peak = std::max(peak, px[base + e * inner]);
            T total{0};
            for (std::size_t e = 0; e < extent; ++e) {
                const T v = std::exp(px[base + e * inner] - peak);
                out[base + e * inner] = v;
                total += v;
            }
            for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= total;
        }
    }
    return make_result<T>(x.shape(), std::move(out), {&x}, "softmax",
                          [outer, extent, inner](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
                              T* g = grad_sink(p[0]);
                              for (std::size_t a = 0; a < outer; ++a) {
                                  for (std::size_t i = 0; i < inner; ++i) {
                                      const std::size_t base = a * extent * inner + i;
                                      T dot{0};
                                      for (std::size_t e = 0; e < extent; ++e)
                                          dot += o.grad[base + e * inner] * o.data[base + e * inner];
                                      for (std::size_t e = 0; e < extent; ++e) {
                                          const std::size_t j = base + e * inner;
                                          g[j] += o.data[j] * (o.grad[j] - dot);
                                      }
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    const std::size_t d = x.dim(-1);
    if ((gain.defined() && gain.numel() != d) || (bias.defined() && bias.numel() != d)) {
        throw DimensionError("layernorm affine parameters do not match " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    std::vector<T> normalized(x.numel());
    std::vector<T> rstd(rows);
    const T* px = x.data().data();
    const T* pg = gain.defined() ? gain.data().data() : nullptr;
    const T* pb = bias.defined() ? bias.data().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = px + r * d;
        T mu{0};
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var{0};
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        rstd[r] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const T xh = (row[j] - mu) * rstd[r];
            normalized[r * d + j] = xh;
            out[r * d + j] = (pg ? pg[j] : T{1}) * xh + (pb ? pb[j] : T{0});
        }
    }
    return make_result<T>(
        x.shape(), std::move(out), {&x, &gain, &bias}, "layernorm",
        [rows, d, normalized = std::move(normalized), rstd = std::move(rstd)](const TensorImpl<T>& o,
                                                                              std::span<const ImplPtr<T>> p) {
            T* gx = grad_sink(p[0]);
            T* gg = grad_sink(p[1]);
            T* gb = grad_sink(p[2]);
            const T* pg = p[1] ? p[1]->data.data() : nullptr;
            std::vector<T> dxh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* g = o.grad.data() + r * d;
                const T* xh = normalized.data() + r * d;
                T mean_d{0}, mean_dx{0};
                for (std::size_t j = 0; j < d; ++j) {
                    dxh[j] = g[j] * (pg ? pg[j] : T{1});
                    mean_d += dxh[j];
                    mean_dx += dxh[j] * xh[j];
                    if (gg) gg[j] += g[j] * xh[j];
                    if (gb) gb[j] += g[j];
                }
                if (!gx) continue;
                mean_d /= static_cast<T>(d);
                mean_dx /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
            }
        });
}

namespace {

struct ConvDims {
    std::size_t channels, height, width;       // image side
    std::size_t kh, kw, stride, padding;
    std::size_t out_h, out_w;                  // column side
};

// Output columns x in [lo, hi) whose input column x*stride - padding + j
// lands inside [0, width).
struct ValidRange {
    std::size_t lo, hi;
};

inline ValidRange valid_range(std::size_t j, const ConvDims& g, std::size_t extent, std::size_t out) {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.padding);
    // smallest x with x*s + shift >= 0
    std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
    // largest x with x*s + shift <= extent - 1, plus one
    std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(extent) - 1 - shift < 0
                            ? 0
                            : (static_cast<std::ptrdiff_t>(extent) - 1 - shift) / s + 1;
    lo = std::min<std::ptrdiff_t>(lo, static_cast<std::ptrdiff_t>(out));
    hi = std::clamp<std::ptrdiff_t>(hi, lo, static_cast<std::ptrdiff_t>(out));
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(c*kh + i)*kw + j, y*out_w + x] = img[c, y*s - p + i, x*s - p + j]
template <typename T>
void im2col(const T* img, const ConvDims& g, T* cols) {
    const std::size_t spatial = g.out_h * g.out_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
        const ValidRange ry = valid_range(i, g, g.height, g.out_h);
        for (std::size_t j = 0; j < g.kw; ++j) {
            const ValidRange rx = valid_range(j, g, g.width, g.out_w);
            const std::size_t x0 = rx.lo * g.stride + j - g.padding;
            for (std::size_t c = 0; c < g.channels; ++c) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * spatial;
                std::fill_n(row, ry.lo * g.out_w, T{0});
                for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                    T* dst = row + y * g.out_w;
                    const T* src = img + (c * g.height + y * g.stride + i - g.padding) * g.width + x0;
                    std::fill_n(dst, rx.lo, T{0});
                    if (g.stride == 1) {
                        std::copy_n(src, rx.hi - rx.lo, dst + rx.lo);
                    } else {
                        for (std::size_t x = rx.lo; x < rx.hi; ++x) dst[x] = src[(x - rx.lo) * g.stride];
                    }
                    std::fill(dst + rx.hi, dst + g.out_w, T{0});
                }
                std::fill(row + ry.hi * g.out_w, row + spatial, T{0});
            }
        }
    }
}

// Adjoint of im2col: scatter-adds columns back onto the image.
template <typename T>
void col2im(const T* cols, const ConvDims& g, T* img) {
    const std::size_t spatial = g.out_h * g.out_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
        const ValidRange ry = valid_range(i, g, g.height, g.out_h);
        for (std::size_t j = 0; j < g.kw; ++j) {
            const ValidRange rx = valid_range(j, g, g.width, g.out_w);
            const std::size_t x0 = rx.lo * g.stride + j - g.padding;
            for (std::size_t c = 0; c < g.channels; ++c) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * spatial;
                for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                    const T* src = row + y * g.out_w;
                    T* dst = img + (c * g.height + y * g.stride + i - g.padding) * g.width + x0;
                    if (g.stride == 1) {
                        for (std::size_t x = rx.lo; x < rx.hi; ++x) dst[x - rx.lo] += src[x];
                    } else {
                        for (std::size_t x = rx.lo; x < rx.hi; ++x) dst[(x - rx.lo) * g.stride] += src[x];
                    }
                }
            }
        }
    }
}

template <typename T>
void add_channel_bias(T* out, const T* bias, std::size_t channels, std::size_t spatial) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < spatial; ++s) out[c * spatial + s] += bias[c];
}

template <typename T>
void accumulate_channel_bias_grad(T* gbias, const T* g, std::size_t channels, std::size_t spatial) {
    for (std::size_t c = 0; c < channels; ++c) {
        T total{0};
        for (std::size_t s = 0; s < spatial; ++s) total += g[c * spatial + s];
        gbias[c] += total;
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geo) {
    if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
        throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    if (geo.stride == 0) throw DimensionError("conv2d: stride must be positive");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (h + 2 * geo.padding < kh || w + 2 * geo.padding < kw) {
        throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
    }
    if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias does not match output channels");
    const ConvDims g{cin, h, w, kh, kw, geo.stride, geo.padding, (h + 2 * geo.padding - kh) / geo.stride + 1,
                     (w + 2 * geo.padding - kw) / geo.stride + 1};
    const std::size_t patch = cin * kh * kw, spatial = g.out_h * g.out_w;
    std::vector<T> out(batch * cout * spatial);
    std::vector<T> cols(patch * spatial);
    MapC<T> wm(weight.data().data(), cout, patch);
    for (std::size_t b = 0; b < batch; ++b) {
        im2col(x.data().data() + b * cin * h * w, g, cols.data());
        MapM<T>(out.data() + b * cout * spatial, cout, spatial).noalias() = wm * MapC<T>(cols.data(), patch, spatial);
        if (bias.defined()) add_channel_bias(out.data() + b * cout * spatial, bias.data().data(), cout, spatial);
    }
    return make_result<T>(
        {batch, cout, g.out_h, g.out_w}, std::move(out), {&x, &weight, &bias}, "conv2d",
        [g, batch, cout, patch, spatial](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
            T* gx = grad_sink(p[0]);
            T* gw = grad_sink(p[1]);
            T* gbias = grad_sink(p[2]);
            const std::size_t image = g.channels * g.height * g.width;
            std::vector<T> cols(patch * spatial);
            MapC<T> wm(p[1]->data.data(), cout, patch);
            for (std::size_t b = 0; b < batch; ++b) {
                MapC<T> gy(o.grad.data() + b * cout * spatial, cout, spatial);
                if (gw) {
                    im2col(p[0]->data.data() + b * image, g, cols.data());
                    MapM<T>(gw, cout, patch).noalias() += gy * MapC<T>(cols.data(), patch, spatial).transpose();
                }
                if (gx) {
                    MapM<T>(cols.data(), patch, spatial).noalias() = wm.transpose() * gy;
                    col2im(cols.data(), g, gx + b * image);
                }
                if (gbias) accumulate_channel_bias_grad(gbias, o.grad.data() + b * cout * spatial, cout, spatial);
            }
        });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geo) {
    if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(0)) {
        throw DimensionError("conv_transpose2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    if (geo.stride == 0 || geo.output_padding >= geo.stride) {
        throw DimensionError("conv_transpose2d: output_padding must be smaller than stride");
    }
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    const auto out_extent = [&](std::size_t in, std::size_t k) -> std::size_t {
        const std::ptrdiff_t e = static_cast<std::ptrdiff_t>((in - 1) * geo.stride + k + geo.output_padding) -
                                 static_cast<std::ptrdiff_t>(2 * geo.padding);
        if (e <= 0) {
            throw DimensionError("conv_transpose2d: empty output for input " + shape_str(x.shape()) + " and weight " +
                                 shape_str(weight.shape()));
        }
        return static_cast<std::size_t>(e);
    };
    const std::size_t oh = out_extent(h, kh), ow = out_extent(w, kw);
    if (bias.defined() && bias.numel() != cout) throw DimensionError("conv_transpose2d: bias does not match channels");
    // The output plays the image role of the equivalent forward conv.
    const ConvDims g{cout, oh, ow, kh, kw, geo.stride, geo.padding, h, w};
    const std::size_t patch = cout * kh * kw, spatial = h * w, image = cout * oh * ow;
    std::vector<T> out(batch * image, T{0});
    std::vector<T> cols(patch * spatial);
    MapC<T> wm(weight.data().data(), cin, patch);
    for (std::size_t b = 0; b < batch; ++b) {
        MapM<T>(cols.data(), patch, spatial).noalias() =
            wm.transpose() * MapC<T>(x.data().data() + b * cin * spatial, cin, spatial);
        col2im(cols.data(), g, out.data() + b * image);
        if (bias.defined()) add_channel_bias(out.data() + b * image, bias.data().data(), cout, oh * ow);
    }
    return make_result<T>(
        {batch, cout, oh, ow}, std::move(out), {&x, &weight, &bias}, "conv_transpose2d",
        [g, batch, cin, patch, spatial, image](const TensorImpl<T>& o, std::span<const ImplPtr<T>> p) {
            T* gx = grad_sink(p[0]);
            T* gw = grad_sink(p[1]);
            T* gbias = grad_sink(p[2]);
            std::vector<T> cols(patch * spatial);
            MapC<T> wm(p[1]->data.data(), cin, patch);
            for (std::size_t b = 0; b < batch; ++b) {
                im2col(o.grad.data() + b * image, g, cols.data());
                MapC<T> gcols(cols.data(), patch, spatial);
                if (gx) MapM<T>(gx + b * cin * spatial, cin, spatial).noalias() += wm * gcols;
                if (gw) {
                    MapM<T>(gw, cin, patch).noalias() +=
                        MapC<T>(p[0]->data.data() + b * cin * spatial, cin, spatial) * gcols.transpose();
                }
                if (gbias) accumulate_channel_bias_grad(gbias, o.grad.data() + b * image, g.channels, g.height * g.width);
            }
        });
}

#define BOQSA_INSTANTIATE(T)                                                                           \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> softmax(const Tensor<T>&, int);                                                 \
    template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry);   \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry);

BOQSA_INSTANTIATE(float)
BOQSA_INSTANTIATE(double)

}  // namespace boqsa
