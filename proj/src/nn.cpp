#include "pttt/nn.hpp"

#include <cmath>
#include <cstring>

#include "pttt/common.hpp"
#include "pttt/kernels.hpp"

namespace pttt::nn {

namespace {
inline int out_dim(int in, int stride) { return (in + stride - 1) / stride; }
}  // namespace

void im2col_3x3(const Volume& in, int stride, std::vector<double>& cols, int& oh, int& ow) {
    oh = out_dim(in.h, stride);
    ow = out_dim(in.w, stride);
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    cols.assign(static_cast<std::size_t>(in.c) * 9 * n, 0.0);
    for (int ci = 0; ci < in.c; ++ci) {
        const double* src = in.plane(ci);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = cols.data() + ((static_cast<std::size_t>(ci) * 9 + ky * 3 + kx)) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= in.h) continue;
                    const double* srow = src + static_cast<std::size_t>(iy) * in.w;
                    double* drow = dst + static_cast<std::size_t>(oy) * ow;
                    // valid ox range so that ix = ox*stride + kx - 1 stays in bounds
                    int ox0 = 0;
                    while (ox0 * stride + kx - 1 < 0) ++ox0;
                    int ox1 = ow;
                    while (ox1 > ox0 && (ox1 - 1) * stride + kx - 1 >= in.w) --ox1;
                    if (stride == 1) {
                        if (ox1 > ox0)
                            std::memcpy(drow + ox0, srow + (ox0 + kx - 1),
                                        static_cast<std::size_t>(ox1 - ox0) * sizeof(double));
                    } else {
                        for (int ox = ox0; ox < ox1; ++ox) drow[ox] = srow[ox * stride + kx - 1];
                    }
                }
            }
        }
    }
}

void col2im_3x3(const std::vector<double>& dcols, int stride, Volume& din_accum) {
    const int oh = out_dim(din_accum.h, stride);
    const int ow = out_dim(din_accum.w, stride);
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < din_accum.c; ++ci) {
        double* dst = din_accum.plane(ci);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = dcols.data() + ((static_cast<std::size_t>(ci) * 9 + ky * 3 + kx)) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= din_accum.h) continue;
                    double* drow = dst + static_cast<std::size_t>(iy) * din_accum.w;
                    const double* srow = src + static_cast<std::size_t>(oy) * ow;
                    int ox0 = 0;
                    while (ox0 * stride + kx - 1 < 0) ++ox0;
                    int ox1 = ow;
                    while (ox1 > ox0 && (ox1 - 1) * stride + kx - 1 >= din_accum.w) --ox1;
                    for (int ox = ox0; ox < ox1; ++ox) drow[ox * stride + kx - 1] += srow[ox];
                }
            }
        }
    }
}

void conv3x3_forward(const Volume& in, const double* w, const double* b, int co, int stride,
                     Volume& out, std::vector<double>& cols_cache) {
    int oh = 0, ow = 0;
    im2col_3x3(in, stride, cols_cache, oh, ow);
    out = Volume(co, oh, ow);
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    const std::size_t k = static_cast<std::size_t>(in.c) * 9;
    const auto& ops = kernels::active();
    ops.matmul_nn(w, cols_cache.data(), out.v.data(), static_cast<std::size_t>(co), k, n, false);
    for (int c = 0; c < co; ++c) {
        double* p = out.plane(c);
        const double bias = b[c];
        for (std::size_t i = 0; i < n; ++i) p[i] += bias;
    }
}

void conv3x3_backward(const Volume& dout, const std::vector<double>& cols, const double* w,
                      int ci, int in_h, int in_w, int stride,
                      double* dw, double* db, Volume* din) {
    const std::size_t n = static_cast<std::size_t>(dout.h) * dout.w;
    const std::size_t k = static_cast<std::size_t>(ci) * 9;
    const std::size_t co = static_cast<std::size_t>(dout.c);
    const auto& ops = kernels::active();
    if (dw) ops.matmul_nt(dout.v.data(), cols.data(), dw, co, n, k, true);
    if (db) {
        for (std::size_t c = 0; c < co; ++c) db[c] += ops.sum(dout.v.data() + c * n, n);
    }
    if (din) {
        std::vector<double> dcols(k * n);
        ops.matmul_tn(w, dout.v.data(), dcols.data(), co, k, n, false);
        *din = Volume(ci, in_h, in_w);
        col2im_3x3(dcols, stride, *din);
    }
}

void conv1x1_forward(const Volume& in, const double* w, const double* b, int co, Volume& out) {
    out = Volume(co, in.h, in.w);
    const std::size_t n = static_cast<std::size_t>(in.h) * in.w;
    const auto& ops = kernels::active();
    ops.matmul_nn(w, in.v.data(), out.v.data(), static_cast<std::size_t>(co),
                  static_cast<std::size_t>(in.c), n, false);
    for (int c = 0; c < co; ++c) {
        double* p = out.plane(c);
        const double bias = b[c];
        for (std::size_t i = 0; i < n; ++i) p[i] += bias;
    }
}

void conv1x1_backward(const Volume& dout, const Volume& in, const double* w,
                      double* dw, double* db, Volume* din) {
    const std::size_t n = static_cast<std::size_t>(dout.h) * dout.w;
    const std::size_t co = static_cast<std::size_t>(dout.c);
    const std::size_t ci = static_cast<std::size_t>(in.c);
    const auto& ops = kernels::active();
    if (dw) ops.matmul_nt(dout.v.data(), in.v.data(), dw, co, n, ci, true);
    if (db)
        for (std::size_t c = 0; c < co; ++c) db[c] += ops.sum(dout.v.data() + c * n, n);
    if (din) {
        *din = Volume(in.c, in.h, in.w);
        ops.matmul_tn(w, dout.v.data(), din->v.data(), co, ci, n, false);
    }
}

double sigmoid(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void silu_forward(Volume& x, Volume& sig_cache) {
    sig_cache = Volume(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double s = sigmoid(x.v[i]);
        sig_cache.v[i] = s;
        x.v[i] *= s;
    }
}

void silu_backward(const Volume& dy, const Volume& pre, const Volume& sig, Volume& dx) {
    dx = Volume(dy.c, dy.h, dy.w);
    for (std::size_t i = 0; i < dy.v.size(); ++i) {
        const double s = sig.v[i];
        dx.v[i] = dy.v[i] * s * (1.0 + pre.v[i] * (1.0 - s));
    }
}

void upsample2x_nearest(const Volume& in, Volume& out) {
    out = Volume(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c) {
        const double* src = in.plane(c);
        double* dst = out.plane(c);
        for (int y = 0; y < in.h; ++y) {
            const double* srow = src + static_cast<std::size_t>(y) * in.w;
            double* d0 = dst + static_cast<std::size_t>(2 * y) * out.w;
            double* d1 = d0 + out.w;
            for (int x = 0; x < in.w; ++x) {
                const double v = srow[x];
                d0[2 * x] = v;
                d0[2 * x + 1] = v;
                d1[2 * x] = v;
                d1[2 * x + 1] = v;
            }
        }
    }
}

void upsample2x_nearest_backward(const Volume& dout, Volume& din) {
    din = Volume(dout.c, dout.h / 2, dout.w / 2);
    for (int c = 0; c < din.c; ++c) {
        const double* src = dout.plane(c);
        double* dst = din.plane(c);
        for (int y = 0; y < din.h; ++y) {
            const double* s0 = src + static_cast<std::size_t>(2 * y) * dout.w;
            const double* s1 = s0 + dout.w;
            double* drow = dst + static_cast<std::size_t>(y) * din.w;
            for (int x = 0; x < din.w; ++x)
                drow[x] = s0[2 * x] + s0[2 * x + 1] + s1[2 * x] + s1[2 * x + 1];
        }
    }
}

namespace {
// Half-pixel-center sampling coordinates for one output axis.
struct LerpTap {
    int i0, i1;
    double w0, w1;
};

std::vector<LerpTap> make_taps(int out_n, int in_n, int factor) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
        double src = (o + 0.5) / factor - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > in_n - 1) src = in_n - 1;
        const int i0 = static_cast<int>(src);
        const int i1 = (i0 + 1 < in_n) ? i0 + 1 : i0;
        const double f = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}
}  // namespace

void upsample_bilinear(const Grid2& in, int factor, Grid2& out) {
    out = Grid2(in.h * factor, in.w * factor);
    const auto ty = make_taps(out.h, in.h, factor);
    const auto tx = make_taps(out.w, in.w, factor);
    for (int y = 0; y < out.h; ++y) {
        const LerpTap& a = ty[static_cast<std::size_t>(y)];
        const double* r0 = in.v.data() + static_cast<std::size_t>(a.i0) * in.w;
        const double* r1 = in.v.data() + static_cast<std::size_t>(a.i1) * in.w;
        double* orow = out.v.data() + static_cast<std::size_t>(y) * out.w;
        for (int x = 0; x < out.w; ++x) {
            const LerpTap& b = tx[static_cast<std::size_t>(x)];
            orow[x] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                      a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        }
    }
}

void upsample_bilinear_backward(const Grid2& dout, int factor, Grid2& din) {
    din = Grid2(dout.h / factor, dout.w / factor);
    const auto ty = make_taps(dout.h, din.h, factor);
    const auto tx = make_taps(dout.w, din.w, factor);
    for (int y = 0; y < dout.h; ++y) {
        const LerpTap& a = ty[static_cast<std::size_t>(y)];
        double* r0 = din.v.data() + static_cast<std::size_t>(a.i0) * din.w;
        double* r1 = din.v.data() + static_cast<std::size_t>(a.i1) * din.w;
        const double* orow = dout.v.data() + static_cast<std::size_t>(y) * dout.w;
        for (int x = 0; x < dout.w; ++x) {
            const LerpTap& b = tx[static_cast<std::size_t>(x)];
            const double g = orow[x];
            r0[b.i0] += a.w0 * b.w0 * g;
            r0[b.i1] += a.w0 * b.w1 * g;
            r1[b.i0] += a.w1 * b.w0 * g;
            r1[b.i1] += a.w1 * b.w1 * g;
        }
    }
}

}  // namespace pttt::nn
