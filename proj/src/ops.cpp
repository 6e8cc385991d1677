// SPDX-License-Identifier: Apache-2.0
#include "dualvae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <memory>
#include <string>

namespace dualvae::inline DUALVAE_ABI {

namespace {

// Row-major C[m,n] += A[m,k] * B[k,n]. Every element accumulates its k terms
// in ascending order and vectorisation runs along n only, so results do not
// depend on an element's position or on buffer alignment.
void gemm_nn(int m, int n, int k, const real* a, const real* b, real* c) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        real* c0 = c + static_cast<std::size_t>(i) * n;
        real* c1 = c0 + n;
        real* c2 = c1 + n;
        real* c3 = c2 + n;
        const real* a0 = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
            const real* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                const real bj = brow[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        real* crow = c + static_cast<std::size_t>(i) * n;
        const real* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real v = arow[p];
            const real* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += v * brow[j];
        }
    }
}

std::vector<real> transposed(const real* x, int rows, int cols) {
    std::vector<real> t(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = x[static_cast<std::size_t>(r) * cols + c];
    }
    return t;
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(int m, int n, int k, const real* a, const real* b, real* c) {
    const std::vector<real> bt = transposed(b, n, k);
    gemm_nn(m, n, k, a, bt.data(), c);
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(int m, int n, int k, const real* a, const real* b, real* c) {
    const std::vector<real> at = transposed(a, k, m);
    gemm_nn(m, n, k, at.data(), b, c);
}

// out[r] += sum over columns of the row-major [rows, cols] block, left to right.
void add_row_sums(const real* x, int rows, int cols, real* out) {
    for (int r = 0; r < rows; ++r) {
        real acc = 0;
        const real* row = x + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += row[c];
        out[r] += acc;
    }
}

Tensor make_output(const Shape& shape, std::vector<real> values, const char* name) {
    ensure_finite(values, name);
    return Tensor::from(shape, std::move(values));
}

void mark_recorded(Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    Tape::active()->record(std::move(fn));
}

void accumulate(const Tensor& target, std::span<const real> delta) {
    if (!target.requires_grad()) return;
    auto g = target.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

bool is_suffix_shape(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

struct ConvPlan {
    int n, c, h, w, o, kh, kw, stride, oh, ow;
    // Source row for (ki, oy) and source column for (kj, ox); -1 marks zero padding.
    std::vector<int> row_src;
    std::vector<int> col_src;
    // Per kj, the output columns [lo, hi) whose sources are contiguous and unpadded.
    std::vector<int> run_lo;
    std::vector<int> run_hi;
};

int padded_index(int i, int n, Padding padding) {
    if (padding == Padding::reflect) return reflect_index(i, n);
    return (i < 0 || i >= n) ? -1 : i;
}

ConvPlan make_conv_plan(const Shape& in, const Shape& k, int stride, Padding padding) {
    DUALVAE_REQUIRE(in.size() == 4, "conv2d input must be [N,C,H,W], got " + shape_str(in));
    DUALVAE_REQUIRE(k.size() == 4, "conv2d kernel must be [O,C,kh,kw], got " + shape_str(k));
    DUALVAE_REQUIRE(k[1] == in[1], "conv2d channel mismatch: input " + shape_str(in) + " kernel " + shape_str(k));
    DUALVAE_REQUIRE(k[2] % 2 == 1 && k[3] % 2 == 1, "conv2d kernel extents must be odd");
    DUALVAE_REQUIRE(stride >= 1, "conv2d stride must be >= 1");
    ConvPlan p{};
    p.n = in[0];
    p.c = in[1];
    p.h = in[2];
    p.w = in[3];
    p.o = k[0];
    p.kh = k[2];
    p.kw = k[3];
    p.stride = stride;
    const int pad_h = p.kh / 2;
    const int pad_w = p.kw / 2;
    if (padding == Padding::reflect) {
        DUALVAE_REQUIRE(pad_h < p.h || p.h == 1, "reflect padding wider than input height");
        DUALVAE_REQUIRE(pad_w < p.w || p.w == 1, "reflect padding wider than input width");
    }
    p.oh = (p.h + 2 * pad_h - p.kh) / stride + 1;
    p.ow = (p.w + 2 * pad_w - p.kw) / stride + 1;
    DUALVAE_REQUIRE(p.oh >= 1 && p.ow >= 1, "conv2d output would be empty");
    p.row_src.resize(static_cast<std::size_t>(p.kh) * p.oh);
    for (int ki = 0; ki < p.kh; ++ki) {
        for (int oy = 0; oy < p.oh; ++oy) p.row_src[ki * p.oh + oy] = padded_index(oy * stride + ki - pad_h, p.h, padding);
    }
    p.col_src.resize(static_cast<std::size_t>(p.kw) * p.ow);
    p.run_lo.assign(p.kw, 0);
    p.run_hi.assign(p.kw, 0);
    for (int kj = 0; kj < p.kw; ++kj) {
        for (int ox = 0; ox < p.ow; ++ox) {
            const int x = ox * stride + kj - pad_w;
            p.col_src[kj * p.ow + ox] = padded_index(x, p.w, padding);
        }
        if (stride == 1) {
            // Unpadded sources are exactly ox + kj - pad_w.
            p.run_lo[kj] = std::clamp(pad_w - kj, 0, p.ow);
            p.run_hi[kj] = std::clamp(p.w - kj + pad_w, p.run_lo[kj], p.ow);
        }
    }
    return p;
}

void im2col(const ConvPlan& p, const real* image, real* cols) {
    const int positions = p.oh * p.ow;
    const int plane = p.h * p.w;
    real* dst = cols;
    for (int ch = 0; ch < p.c; ++ch) {
        const real* src_plane = image + static_cast<std::size_t>(ch) * plane;
        for (int ki = 0; ki < p.kh; ++ki) {
            for (int kj = 0; kj < p.kw; ++kj, dst += positions) {
                const int* cs = p.col_src.data() + kj * p.ow;
                const int lo = p.run_lo[kj], hi = p.run_hi[kj];
                for (int oy = 0; oy < p.oh; ++oy) {
                    real* d = dst + oy * p.ow;
                    const int r = p.row_src[ki * p.oh + oy];
                    if (r < 0) {
                        std::fill(d, d + p.ow, real(0));
                        continue;
                    }
                    const real* srow = src_plane + r * p.w;
                    for (int ox = 0; ox < lo; ++ox) d[ox] = cs[ox] < 0 ? real(0) : srow[cs[ox]];
                    if (hi > lo) std::copy(srow + cs[lo], srow + cs[lo] + (hi - lo), d + lo);
                    for (int ox = hi; ox < p.ow; ++ox) d[ox] = cs[ox] < 0 ? real(0) : srow[cs[ox]];
                }
            }
        }
    }
}

void col2im_add(const ConvPlan& p, const real* cols, real* image_grad) {
    const int positions = p.oh * p.ow;
    const int plane = p.h * p.w;
    const real* src = cols;
    for (int ch = 0; ch < p.c; ++ch) {
        real* dst_plane = image_grad + static_cast<std::size_t>(ch) * plane;
        for (int ki = 0; ki < p.kh; ++ki) {
            for (int kj = 0; kj < p.kw; ++kj, src += positions) {
                const int* cs = p.col_src.data() + kj * p.ow;
                const int lo = p.run_lo[kj], hi = p.run_hi[kj];
                for (int oy = 0; oy < p.oh; ++oy) {
                    const int r = p.row_src[ki * p.oh + oy];
                    if (r < 0) continue;
                    const real* s = src + oy * p.ow;
                    real* drow = dst_plane + r * p.w;
                    for (int ox = 0; ox < lo; ++ox) {
                        if (cs[ox] >= 0) drow[cs[ox]] += s[ox];
                    }
                    real* run = drow + (hi > lo ? cs[lo] : 0);
                    for (int ox = lo; ox < hi; ++ox) run[ox - lo] += s[ox];
                    for (int ox = hi; ox < p.ow; ++ox) {
                        if (cs[ox] >= 0) drow[cs[ox]] += s[ox];
                    }
                }
            }
        }
    }
}

template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
    const auto xs = x.data();
    std::vector<real> out_values(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out_values[i] = fwd(xs[i]);
    Tensor out = make_output(x.shape(), std::move(out_values), name);
    if (should_record({&x})) {
        mark_recorded(out, [x, out, deriv]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto xs = x.data();
            auto ys = out.data();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xs[i], ys[i]);
        });
    }
    return out;
}

}  // namespace

void ensure_finite(std::span<const real> values, const char* where) {
    for (real v : values) {
        if (!std::isfinite(v)) throw NumericFault(std::string(where) + " produced a non-finite value");
    }
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, Padding padding) {
    auto plan = std::make_shared<ConvPlan>(make_conv_plan(input.shape(), kernel.shape(), stride, padding));
    if (bias.defined()) {
        DUALVAE_REQUIRE(bias.numel() == static_cast<std::size_t>(plan->o), "conv2d bias length mismatch");
    }
    const int ckk = plan->c * plan->kh * plan->kw;
    const int positions = plan->oh * plan->ow;
    const std::size_t in_sample = static_cast<std::size_t>(plan->c) * plan->h * plan->w;
    const std::size_t out_sample = static_cast<std::size_t>(plan->o) * positions;
    const std::size_t col_sample = static_cast<std::size_t>(ckk) * positions;

    const bool record = should_record({&input, &kernel, &bias});
    // The weight gradient needs every sample's columns, so keep them all when recording.
    const bool keep_cols = record && kernel.requires_grad();
    auto cols = std::make_shared<std::vector<real>>(col_sample * (keep_cols ? plan->n : 1));
    std::vector<real> out_values(out_sample * plan->n);
    for (int s = 0; s < plan->n; ++s) {
        real* c = cols->data() + (keep_cols ? s * col_sample : 0);
        im2col(*plan, input.data().data() + s * in_sample, c);
        real* out = out_values.data() + s * out_sample;
        gemm_nn(plan->o, positions, ckk, kernel.data().data(), c, out);
        if (bias.defined()) {
            for (int oc = 0; oc < plan->o; ++oc) {
                real* row = out + static_cast<std::size_t>(oc) * positions;
                for (int q = 0; q < positions; ++q) row[q] += bias.data()[oc];
            }
        }
    }
    Tensor out = make_output({plan->n, plan->o, plan->oh, plan->ow}, std::move(out_values), "conv2d");
    if (record) {
        if (!keep_cols) cols.reset();
        mark_recorded(out, [input, kernel, bias, out, plan, cols]() mutable {
            if (!out.has_grad()) return;
            const int ckk = plan->c * plan->kh * plan->kw;
            const int positions = plan->oh * plan->ow;
            const std::size_t in_sample = static_cast<std::size_t>(plan->c) * plan->h * plan->w;
            const std::size_t out_sample = static_cast<std::size_t>(plan->o) * positions;
            const std::size_t col_sample = static_cast<std::size_t>(ckk) * positions;
            auto g = out.grad();
            std::vector<real> dcols(col_sample);
            const bool want_w = kernel.requires_grad();
            const bool want_x = input.requires_grad();
            const bool want_b = bias.defined() && bias.requires_grad();
            for (int s = 0; s < plan->n; ++s) {
                const real* dy = g.data() + s * out_sample;
                if (want_w) gemm_nt(plan->o, ckk, positions, dy, cols->data() + s * col_sample, kernel.grad().data());
                if (want_x) {
                    std::fill(dcols.begin(), dcols.end(), real(0));
                    gemm_tn(ckk, positions, plan->o, kernel.data().data(), dy, dcols.data());
                    col2im_add(*plan, dcols.data(), input.grad().data() + s * in_sample);
                }
                if (want_b) add_row_sums(dy, plan->o, positions, bias.grad().data());
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    DUALVAE_REQUIRE(x.rank() == 2 && weight.rank() == 2, "linear expects x:[N,in] and weight:[out,in]");
    const int n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
    DUALVAE_REQUIRE(weight.dim(1) == in,
                    "linear feature mismatch: x " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
    if (bias.defined()) DUALVAE_REQUIRE(bias.numel() == static_cast<std::size_t>(outf), "linear bias length mismatch");
    std::vector<real> values(static_cast<std::size_t>(n) * outf);
    gemm_nt(n, outf, in, x.data().data(), weight.data().data(), values.data());
    if (bias.defined()) {
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < outf; ++c) values[static_cast<std::size_t>(r) * outf + c] += bias.data()[c];
        }
    }
    Tensor out = make_output({n, outf}, std::move(values), "linear");
    if (should_record({&x, &weight, &bias})) {
        mark_recorded(out, [x, weight, bias, out, n, in, outf]() mutable {
            if (!out.has_grad()) return;
            const real* dy = out.grad().data();
            if (x.requires_grad()) gemm_nn(n, in, outf, dy, weight.data().data(), x.grad().data());
            if (weight.requires_grad()) gemm_tn(outf, in, n, dy, x.data().data(), weight.grad().data());
            if (bias.defined() && bias.requires_grad()) {
                const std::vector<real> dyt = transposed(dy, n, outf);
                add_row_sums(dyt.data(), outf, n, bias.grad().data());
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    DUALVAE_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<real> values(static_cast<std::size_t>(m) * n);
    gemm_nn(m, n, k, a.data().data(), b.data().data(), values.data());
    Tensor out = make_output({m, n}, std::move(values), "matmul");
    if (should_record({&a, &b})) {
        mark_recorded(out, [a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const real* dy = out.grad().data();
            if (a.requires_grad()) gemm_nt(m, k, n, dy, b.data().data(), a.grad().data());
            if (b.requires_grad()) gemm_tn(k, n, m, a.data().data(), dy, b.grad().data());
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps, int axis) {
    DUALVAE_REQUIRE(eps > 0, "layer_norm eps must be positive");
    if (axis < 0) axis += x.rank();
    DUALVAE_REQUIRE(axis >= 0 && axis < x.rank(), "layer_norm axis out of range");
    const int features = x.dim(axis);
    DUALVAE_REQUIRE(features > 0, "layer_norm over an empty feature dimension");
    DUALVAE_REQUIRE(gain.numel() == static_cast<std::size_t>(features) &&
                        bias.numel() == static_cast<std::size_t>(features),
                    "layer_norm gain/bias length must equal the normalised dimension");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(x.dim(i));

    auto xs = x.data();
    auto gs = gain.data();
    auto bs = bias.data();
    auto normalized = std::make_shared<std::vector<real>>(xs.size());
    auto inv_std = std::make_shared<std::vector<real>>(outer * inner);
    std::vector<real> values(xs.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * features * inner + i;
            real mu = 0;
            for (int c = 0; c < features; ++c) mu += xs[base + c * inner];
            mu /= features;
            real var = 0;
            for (int c = 0; c < features; ++c) {
                const real d = xs[base + c * inner] - mu;
                var += d * d;
            }
            var /= features;
            const real is = real(1) / std::sqrt(var + eps);
            (*inv_std)[o * inner + i] = is;
            for (int c = 0; c < features; ++c) {
                const std::size_t idx = base + c * inner;
                const real xh = (xs[idx] - mu) * is;
                (*normalized)[idx] = xh;
                values[idx] = gs[c] * xh + bs[c];
            }
        }
    }
    Tensor out = make_output(x.shape(), std::move(values), "layer_norm");
    if (should_record({&x, &gain, &bias})) {
        mark_recorded(out, [x, gain, bias, out, normalized, inv_std, outer, inner, features]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gs = gain.data();
            const auto& xh = *normalized;
            std::vector<real> dxhat(static_cast<std::size_t>(features));
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * features * inner + i;
                    real sum_d = 0, sum_dx = 0;
                    for (int c = 0; c < features; ++c) {
                        const std::size_t idx = base + c * inner;
                        dxhat[c] = g[idx] * gs[c];
                        sum_d += dxhat[c];
                        sum_dx += dxhat[c] * xh[idx];
                    }
                    if (x.requires_grad()) {
                        auto gx = x.grad();
                        const real is = (*inv_std)[o * inner + i];
                        for (int c = 0; c < features; ++c) {
                            const std::size_t idx = base + c * inner;
                            gx[idx] += is * (dxhat[c] - sum_d / features - xh[idx] * sum_dx / features);
                        }
                    }
                    if (gain.requires_grad()) {
                        auto gg = gain.grad();
                        for (int c = 0; c < features; ++c) gg[c] += g[base + c * inner] * xh[base + c * inner];
                    }
                    if (bias.requires_grad()) {
                        auto gb = bias.grad();
                        for (int c = 0; c < features; ++c) gb[c] += g[base + c * inner];
                    }
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    DUALVAE_REQUIRE(x.rank() == 4, "upsample_nearest2x expects [N,C,H,W]");
    const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const int h2 = 2 * h, w2 = 2 * w;
    auto xs = x.data();
    std::vector<real> values(static_cast<std::size_t>(planes) * h2 * w2);
    for (int p = 0; p < planes; ++p) {
        for (int y = 0; y < h2; ++y) {
            for (int xx = 0; xx < w2; ++xx) {
                values[(static_cast<std::size_t>(p) * h2 + y) * w2 + xx] = xs[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
            }
        }
    }
    Tensor out = make_output({x.dim(0), x.dim(1), h2, w2}, std::move(values), "upsample_nearest2x");
    if (should_record({&x})) {
        mark_recorded(out, [x, out, planes, h, w]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            const int h2 = 2 * h, w2 = 2 * w;
            for (int p = 0; p < planes; ++p) {
                for (int y = 0; y < h2; ++y) {
                    for (int xx = 0; xx < w2; ++xx) {
                        gx[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] += g[(static_cast<std::size_t>(p) * h2 + y) * w2 + xx];
                    }
                }
            }
        });
    }
    return out;
}

Tensor avg_pool2x(const Tensor& x) {
    DUALVAE_REQUIRE(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
                    "avg_pool2x expects [N,C,H,W] with even H and W");
    const int planes = x.dim(0) * x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
    auto xs = x.data();
    std::vector<real> values(static_cast<std::size_t>(planes) * h * w);
    for (int p = 0; p < planes; ++p) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const real* row0 = xs.data() + (static_cast<std::size_t>(p) * 2 * h + 2 * y) * 2 * w + 2 * xx;
                const real* row1 = row0 + 2 * w;
                values[(static_cast<std::size_t>(p) * h + y) * w + xx] = (row0[0] + row0[1] + row1[0] + row1[1]) / real(4);
            }
        }
    }
    Tensor out = make_output({x.dim(0), x.dim(1), h, w}, std::move(values), "avg_pool2x");
    if (should_record({&x})) {
        mark_recorded(out, [x, out, planes, h, w]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (int p = 0; p < planes; ++p) {
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        const real d = g[(static_cast<std::size_t>(p) * h + y) * w + xx] / real(4);
                        real* row0 = gx.data() + (static_cast<std::size_t>(p) * 2 * h + 2 * y) * 2 * w + 2 * xx;
                        real* row1 = row0 + 2 * w;
                        row0[0] += d;
                        row0[1] += d;
                        row1[0] += d;
                        row1[1] += d;
                    }
                }
            }
        });
    }
    return out;
}

Tensor channel_mean(const Tensor& x) {
    DUALVAE_REQUIRE(x.rank() == 4 && x.dim(1) >= 1, "channel_mean expects [N,C,H,W] with C >= 1");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto xs = x.data();
    std::vector<real> values(n * plane, real(0));
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const real* src = xs.data() + (static_cast<std::size_t>(s) * c + ch) * plane;
            real* dst = values.data() + s * plane;
            for (std::size_t q = 0; q < plane; ++q) dst[q] += src[q];
        }
        for (std::size_t q = 0; q < plane; ++q) values[s * plane + q] /= c;
    }
    Tensor out = make_output({n, 1, x.dim(2), x.dim(3)}, std::move(values), "channel_mean");
    if (should_record({&x})) {
        mark_recorded(out, [x, out, n, c, plane]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (int s = 0; s < n; ++s) {
                for (int ch = 0; ch < c; ++ch) {
                    real* dst = gx.data() + (static_cast<std::size_t>(s) * c + ch) * plane;
                    for (std::size_t q = 0; q < plane; ++q) dst[q] += g[s * plane + q] / c;
                }
            }
        });
    }
    return out;
}

Tensor spatial_mean(const Tensor& x) {
    DUALVAE_REQUIRE(x.rank() == 4, "spatial_mean expects [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto xs = x.data();
    std::vector<real> values(static_cast<std::size_t>(n) * c);
    for (std::size_t p = 0; p < values.size(); ++p) {
        real acc = 0;
        for (std::size_t q = 0; q < plane; ++q) acc += xs[p * plane + q];
        values[p] = acc / static_cast<real>(plane);
    }
    Tensor out = make_output({n, c}, std::move(values), "spatial_mean");
    if (should_record({&x})) {
        mark_recorded(out, [x, out, plane]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (std::size_t p = 0; p < g.size(); ++p) {
                const real d = g[p] / static_cast<real>(plane);
                for (std::size_t q = 0; q < plane; ++q) gx[p * plane + q] += d;
            }
        });
    }
    return out;
}

Tensor broadcast_spatial(const Tensor& x, int height, int width) {
    DUALVAE_REQUIRE(x.rank() == 2, "broadcast_spatial expects [N,C]");
    DUALVAE_REQUIRE(height > 0 && width > 0, "broadcast_spatial needs a positive extent");
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    auto xs = x.data();
    std::vector<real> values(xs.size() * plane);
    for (std::size_t p = 0; p < xs.size(); ++p) std::fill_n(values.begin() + p * plane, plane, xs[p]);
    Tensor out = make_output({x.dim(0), x.dim(1), height, width}, std::move(values), "broadcast_spatial");
    if (should_record({&x})) {
        mark_recorded(out, [x, out, plane]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (std::size_t p = 0; p < gx.size(); ++p) {
                real acc = 0;
                for (std::size_t q = 0; q < plane; ++q) acc += g[p * plane + q];
                gx[p] += acc;
            }
        });
    }
    return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
    DUALVAE_REQUIRE(!parts.empty(), "concat_channels needs at least one tensor");
    const Shape& first = parts.front().shape();
    DUALVAE_REQUIRE(first.size() >= 2, "concat_channels needs rank >= 2");
    const int n = first[0];
    std::size_t inner = 1;
    for (std::size_t i = 2; i < first.size(); ++i) inner *= static_cast<std::size_t>(first[i]);
    int total_c = 0;
    for (const auto& t : parts) {
        const Shape& s = t.shape();
        DUALVAE_REQUIRE(s.size() == first.size() && s[0] == n && std::equal(s.begin() + 2, s.end(), first.begin() + 2),
                        "concat_channels shape mismatch: " + shape_str(s) + " vs " + shape_str(first));
        total_c += s[1];
    }
    std::vector<real> values(static_cast<std::size_t>(n) * total_c * inner);
    int offset = 0;
    for (const auto& t : parts) {
        const int c = t.dim(1);
        auto src = t.data();
        for (int s = 0; s < n; ++s) {
            std::copy_n(src.begin() + static_cast<std::size_t>(s) * c * inner, c * inner,
                        values.begin() + (static_cast<std::size_t>(s) * total_c + offset) * inner);
        }
        offset += c;
    }
    Shape shape = first;
    shape[1] = total_c;
    Tensor out = make_output(shape, std::move(values), "concat_channels");
    bool any = false;
    for (const auto& t : parts) any = any || should_record({&t});
    if (any) {
        std::vector<Tensor> saved(parts.begin(), parts.end());
        mark_recorded(out, [saved, out, n, total_c, inner]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            int offset = 0;
            for (auto& t : saved) {
                const int c = t.dim(1);
                if (t.requires_grad()) {
                    auto gt = t.grad();
                    for (int s = 0; s < n; ++s) {
                        const real* src = g.data() + (static_cast<std::size_t>(s) * total_c + offset) * inner;
                        real* dst = gt.data() + static_cast<std::size_t>(s) * c * inner;
                        for (std::size_t q = 0; q < c * inner; ++q) dst[q] += src[q];
                    }
                }
                offset += c;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    DUALVAE_REQUIRE(shape_numel(shape) == x.numel(),
                    "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
    Tensor out = Tensor::from(shape, x.values());
    if (should_record({&x})) {
        mark_recorded(out, [x, out]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            accumulate(x, out.grad());
        });
    }
    return out;
}

Tensor leaky_relu(const Tensor& x, real slope) {
    return unary_op(
        x, "leaky_relu", [slope](real v) { return v > 0 ? v : slope * v; },
        [slope](real v, real) { return v > 0 ? real(1) : slope; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, "sigmoid",
        [](real v) {
            if (v >= 0) return real(1) / (real(1) + std::exp(-v));
            const real e = std::exp(v);
            return e / (real(1) + e);
        },
        [](real, real y) { return y * (real(1) - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, "tanh", [](real v) { return std::tanh(v); }, [](real, real y) { return real(1) - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, "exp", [](real v) { return std::exp(v); }, [](real, real y) { return y; });
}

namespace {

enum class BinaryKind { add, sub, mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    DUALVAE_REQUIRE(is_suffix_shape(a.shape(), b.shape()),
                    std::string(name) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto as = a.data();
    auto bs = b.data();
    const std::size_t nb = bs.size();
    std::vector<real> values(as.size());
    for (std::size_t i = 0; i < as.size(); ++i) {
        const real bv = bs[i % nb];
        switch (kind) {
            case BinaryKind::add: values[i] = as[i] + bv; break;
            case BinaryKind::sub: values[i] = as[i] - bv; break;
            case BinaryKind::mul: values[i] = as[i] * bv; break;
        }
    }
    Tensor out = make_output(a.shape(), std::move(values), name);
    if (should_record({&a, &b})) {
        mark_recorded(out, [a, b, out, kind, nb]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                auto bs = b.data();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == BinaryKind::mul ? g[i] * bs[i % nb] : g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                auto as = a.data();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    switch (kind) {
                        case BinaryKind::add: gb[i % nb] += g[i]; break;
                        case BinaryKind::sub: gb[i % nb] -= g[i]; break;
                        case BinaryKind::mul: gb[i % nb] += g[i] * as[i]; break;
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, real factor) {
    return unary_op(
        x, "scale", [factor](real v) { return v * factor; }, [factor](real, real) { return factor; });
}

Tensor add_scalar(const Tensor& x, real value) {
    return unary_op(
        x, "add_scalar", [value](real v) { return v + value; }, [](real, real) { return real(1); });
}

namespace {

template <class Fwd, class Deriv>
Tensor reduce_op(const Tensor& x, const char* name, Fwd term, Deriv deriv, real post_scale = real(1)) {
    auto xs = x.data();
    real acc = 0;
    for (real v : xs) acc += term(v);
    Tensor out = make_output({1}, {acc * post_scale}, name);
    if (should_record({&x})) {
        mark_recorded(out, [x, out, deriv, post_scale]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const real g = out.grad()[0] * post_scale;
            auto xs = x.data();
            auto gx = x.grad();
            for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += g * deriv(xs[i]);
        });
    }
    return out;
}

}  // namespace

Tensor sum(const Tensor& x) {
    return reduce_op(x, "sum", [](real v) { return v; }, [](real) { return real(1); });
}

Tensor mean(const Tensor& x) {
    return reduce_op(
        x, "mean", [](real v) { return v; }, [](real) { return real(1); }, real(1) / static_cast<real>(x.numel()));
}

Tensor l1_norm(const Tensor& x) {
    return reduce_op(
        x, "l1_norm", [](real v) { return std::abs(v); },
        [](real v) { return v > 0 ? real(1) : (v < 0 ? real(-1) : real(0)); });
}

Tensor sq_l2_norm(const Tensor& x) {
    return reduce_op(x, "sq_l2_norm", [](real v) { return v * v; }, [](real v) { return 2 * v; });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    DUALVAE_REQUIRE(logits.rank() == 2, "cross_entropy expects logits [N,V]");
    const int n = logits.dim(0), vocab = logits.dim(1);
    DUALVAE_REQUIRE(targets.size() == static_cast<std::size_t>(n), "cross_entropy target count mismatch");
    auto ls = logits.data();
    auto probs = std::make_shared<std::vector<real>>(ls.size());
    real total = 0;
    for (int r = 0; r < n; ++r) {
        DUALVAE_REQUIRE(targets[r] >= 0 && targets[r] < vocab, "cross_entropy target out of vocabulary");
        const real* row = ls.data() + static_cast<std::size_t>(r) * vocab;
        const real mx = *std::max_element(row, row + vocab);
        real z = 0;
        for (int v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
        const real log_z = mx + std::log(z);
        for (int v = 0; v < vocab; ++v) (*probs)[static_cast<std::size_t>(r) * vocab + v] = std::exp(row[v] - log_z);
        total += log_z - row[targets[r]];
    }
    Tensor out = make_output({1}, {total / n}, "cross_entropy");
    if (should_record({&logits})) {
        std::vector<int> saved_targets(targets.begin(), targets.end());
        mark_recorded(out, [logits, out, probs, saved_targets, n, vocab]() mutable {
            if (!out.has_grad() || !logits.requires_grad()) return;
            const real g = out.grad()[0] / n;
            auto gl = logits.grad();
            for (int r = 0; r < n; ++r) {
                for (int v = 0; v < vocab; ++v) {
                    const std::size_t idx = static_cast<std::size_t>(r) * vocab + v;
                    gl[idx] += g * ((*probs)[idx] - (v == saved_targets[r] ? real(1) : real(0)));
                }
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, std::span<const int> indices) {
    DUALVAE_REQUIRE(table.rank() == 2, "embedding table must be [V,C]");
    const int vocab = table.dim(0), c = table.dim(1);
    auto ts = table.data();
    std::vector<real> values(indices.size() * c);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        DUALVAE_REQUIRE(indices[r] >= 0 && indices[r] < vocab, "embedding index out of range");
        std::copy_n(ts.begin() + static_cast<std::size_t>(indices[r]) * c, c, values.begin() + r * c);
    }
    Tensor out = make_output({static_cast<int>(indices.size()), c}, std::move(values), "embedding");
    if (should_record({&table})) {
        std::vector<int> saved(indices.begin(), indices.end());
        mark_recorded(out, [table, out, saved, c]() mutable {
            if (!out.has_grad() || !table.requires_grad()) return;
            auto g = out.grad();
            auto gt = table.grad();
            for (std::size_t r = 0; r < saved.size(); ++r) {
                for (int k = 0; k < c; ++k) gt[static_cast<std::size_t>(saved[r]) * c + k] += g[r * c + k];
            }
        });
    }
    return out;
}

Tensor straight_through(const Tensor& pre, const Tensor& quantized) {
    DUALVAE_REQUIRE(pre.shape() == quantized.shape(), "straight_through shape mismatch");
    Tensor out = make_output(quantized.shape(), quantized.values(), "straight_through");
    if (should_record({&pre})) {
        mark_recorded(out, [pre, out]() mutable {
            if (!out.has_grad() || !pre.requires_grad()) return;
            accumulate(pre, out.grad());
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, real rate, Rng& rng) {
    DUALVAE_REQUIRE(rate >= 0 && rate < 1, "dropout rate must be in [0,1)");
    if (rate == 0) return x;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    auto mask = std::make_shared<std::vector<real>>(x.numel());
    const real kept_scale = real(1) / (real(1) - rate);
    for (auto& m : *mask) m = keep(rng) ? kept_scale : real(0);
    auto xs = x.data();
    std::vector<real> values(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) values[i] = xs[i] * (*mask)[i];
    Tensor out = make_output(x.shape(), std::move(values), "dropout");
    if (should_record({&x})) {
        mark_recorded(out, [x, out, mask]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    DUALVAE_REQUIRE(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
                    "causal_attention expects q,k,v of identical shape [B,T,C]");
    const int batch = q.dim(0), steps = q.dim(1), channels = q.dim(2);
    DUALVAE_REQUIRE(heads >= 1 && channels % heads == 0, "causal_attention channels must divide by heads");
    const int head_dim = channels / heads;
    const real inv_sqrt = real(1) / std::sqrt(static_cast<real>(head_dim));
    auto qs = q.data();
    auto ks = k.data();
    auto vs = v.data();
    // probs[b][h][i][j] for j <= i, stored densely with zeros above the diagonal.
    auto probs = std::make_shared<std::vector<real>>(static_cast<std::size_t>(batch) * heads * steps * steps, real(0));
    std::vector<real> values(qs.size(), real(0));
    auto at = [&](int b, int t, int h, int d) {
        return (static_cast<std::size_t>(b) * steps + t) * channels + static_cast<std::size_t>(h) * head_dim + d;
    };
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < steps; ++i) {
                real* p = probs->data() + ((static_cast<std::size_t>(b) * heads + h) * steps + i) * steps;
                real mx = -std::numeric_limits<real>::infinity();
                for (int j = 0; j <= i; ++j) {
                    real s = 0;
                    for (int d = 0; d < head_dim; ++d) s += qs[at(b, i, h, d)] * ks[at(b, j, h, d)];
                    p[j] = s * inv_sqrt;
                    mx = std::max(mx, p[j]);
                }
                real z = 0;
                for (int j = 0; j <= i; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    z += p[j];
                }
                for (int j = 0; j <= i; ++j) p[j] /= z;
                for (int j = 0; j <= i; ++j) {
                    for (int d = 0; d < head_dim; ++d) values[at(b, i, h, d)] += p[j] * vs[at(b, j, h, d)];
                }
            }
        }
    }
    Tensor out = make_output(q.shape(), std::move(values), "causal_attention");
    if (should_record({&q, &k, &v})) {
        mark_recorded(out, [q, k, v, out, probs, batch, steps, channels, heads, head_dim, inv_sqrt]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto qs = q.data();
            auto ks = k.data();
            auto vs = v.data();
            std::vector<real> gq(qs.size(), real(0)), gk(qs.size(), real(0)), gv(qs.size(), real(0));
            auto at = [&](int b, int t, int h, int d) {
                return (static_cast<std::size_t>(b) * steps + t) * channels + static_cast<std::size_t>(h) * head_dim + d;
            };
            std::vector<real> dp(static_cast<std::size_t>(steps));
            for (int b = 0; b < batch; ++b) {
                for (int h = 0; h < heads; ++h) {
                    for (int i = 0; i < steps; ++i) {
                        const real* p = probs->data() + ((static_cast<std::size_t>(b) * heads + h) * steps + i) * steps;
                        real dot = 0;
                        for (int j = 0; j <= i; ++j) {
                            real s = 0;
                            for (int d = 0; d < head_dim; ++d) {
                                s += g[at(b, i, h, d)] * vs[at(b, j, h, d)];
                                gv[at(b, j, h, d)] += p[j] * g[at(b, i, h, d)];
                            }
                            dp[j] = s;
                            dot += p[j] * s;
                        }
                        for (int j = 0; j <= i; ++j) {
                            const real ds = p[j] * (dp[j] - dot) * inv_sqrt;
                            for (int d = 0; d < head_dim; ++d) {
                                gq[at(b, i, h, d)] += ds * ks[at(b, j, h, d)];
                                gk[at(b, j, h, d)] += ds * qs[at(b, i, h, d)];
                            }
                        }
                    }
                }
            }
            accumulate(q, gq);
            accumulate(k, gk);
            accumulate(v, gv);
        });
    }
    return out;
}

}  // namespace dualvae
