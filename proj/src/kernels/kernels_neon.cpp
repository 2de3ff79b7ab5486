// NEON kernels for aarch64, 2 doubles per vector. NEON is baseline on
// aarch64 so no extra compile flags are needed.

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>

#include "pttt/kernels.hpp"

namespace pttt::kernels {
namespace {

inline double hsum2(float64x2_t v) { return vgetq_lane_f64(v, 0) + vgetq_lane_f64(v, 1); }

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t yv = vld1q_f64(y + i);
        yv = vfmaq_f64(yv, av, vld1q_f64(x + i));
        vst1q_f64(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_neon(double a, double* x, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(av, vld1q_f64(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    for (; i + 2 <= n; i += 2) acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = hsum2(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_neon(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = hsum2(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sumsq_diff_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        acc = vfmaq_f64(acc, d, d);
    }
    double s = hsum2(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void matmul_nn_neon(const double* A, const double* B, double* C,
                    std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        double* c = C + m * N;
        if (!accumulate)
            for (std::size_t j = 0; j < N; ++j) c[j] = 0.0;
        const double* a = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const float64x2_t av = vdupq_n_f64(a[k]);
            const double* b = B + k * N;
            std::size_t j = 0;
            for (; j + 2 <= N; j += 2) {
                float64x2_t cv = vld1q_f64(c + j);
                cv = vfmaq_f64(cv, av, vld1q_f64(b + j));
                vst1q_f64(c + j, cv);
            }
            for (; j < N; ++j) c[j] += a[k] * b[j];
        }
    }
}

void matmul_nt_neon(const double* A, const double* B, double* C,
                    std::size_t M, std::size_t N, std::size_t K, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * N;
        double* c = C + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double s = dot_neon(a, B + k * N, N);
            if (accumulate)
                c[k] += s;
            else
                c[k] = s;
        }
    }
}

void matmul_tn_neon(const double* A, const double* B, double* C,
                    std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < K * N; ++i) C[i] = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * K;
        const double* b = B + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const float64x2_t av = vdupq_n_f64(a[k]);
            double* c = C + k * N;
            std::size_t j = 0;
            for (; j + 2 <= N; j += 2) {
                float64x2_t cv = vld1q_f64(c + j);
                cv = vfmaq_f64(cv, av, vld1q_f64(b + j));
                vst1q_f64(c + j, cv);
            }
            for (; j < N; ++j) c[j] += a[k] * b[j];
        }
    }
}

void adam_update_neon(double* p, double* m, double* v, const double* g, std::size_t n,
                      double lr, double beta1, double beta2, double eps,
                      double bc1, double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

const Ops& neon_ops() {
    static const Ops ops = {
        "neon",
        axpy_neon,
        scale_neon,
        dot_neon,
        sum_neon,
        sumsq_diff_neon,
        matmul_nn_neon,
        matmul_nt_neon,
        matmul_tn_neon,
        adam_update_neon,
    };
    return ops;
}

}  // namespace pttt::kernels

#endif  // aarch64
