// AVX2 + FMA kernels, 4 doubles per vector. Compiled with -mavx2 -mfma on
// x86-64 only; dispatch guarantees they never run on hosts without AVX2.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "pttt/kernels.hpp"

namespace pttt::kernels {
namespace {

inline double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_avx2(double a, double* x, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum4(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sumsq_diff_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum4(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// C[M x N] (+)= A[M x K] * B[K x N]. axpy-style over contiguous rows of B,
// two K-steps fused per pass to cut C traffic.
void matmul_nn_avx2(const double* A, const double* B, double* C,
                    std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        double* c = C + m * N;
        if (!accumulate) {
            std::size_t j = 0;
            const __m256d z = _mm256_setzero_pd();
            for (; j + 4 <= N; j += 4) _mm256_storeu_pd(c + j, z);
            for (; j < N; ++j) c[j] = 0.0;
        }
        const double* a = A + m * K;
        std::size_t k = 0;
        for (; k + 2 <= K; k += 2) {
            const __m256d a0 = _mm256_set1_pd(a[k]);
            const __m256d a1 = _mm256_set1_pd(a[k + 1]);
            const double* b0 = B + k * N;
            const double* b1 = b0 + N;
            std::size_t j = 0;
            for (; j + 4 <= N; j += 4) {
                __m256d cv = _mm256_loadu_pd(c + j);
                cv = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), cv);
                cv = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), cv);
                _mm256_storeu_pd(c + j, cv);
            }
            for (; j < N; ++j) c[j] += a[k] * b0[j] + a[k + 1] * b1[j];
        }
        for (; k < K; ++k) {
            const __m256d av = _mm256_set1_pd(a[k]);
            const double* b = B + k * N;
            std::size_t j = 0;
            for (; j + 4 <= N; j += 4) {
                __m256d cv = _mm256_loadu_pd(c + j);
                cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j), cv);
                _mm256_storeu_pd(c + j, cv);
            }
            for (; j < N; ++j) c[j] += a[k] * b[j];
        }
    }
}

// C[M x K] (+)= A[M x N] * B[K x N]^T. Dot products over contiguous N.
void matmul_nt_avx2(const double* A, const double* B, double* C,
                    std::size_t M, std::size_t N, std::size_t K, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * N;
        double* c = C + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double s = dot_avx2(a, B + k * N, N);
            if (accumulate)
                c[k] += s;
            else
                c[k] = s;
        }
    }
}

// C[K x N] (+)= A[M x K]^T * B[M x N]
void matmul_tn_avx2(const double* A, const double* B, double* C,
                    std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    if (!accumulate) {
        const __m256d z = _mm256_setzero_pd();
        std::size_t i = 0;
        for (; i + 4 <= K * N; i += 4) _mm256_storeu_pd(C + i, z);
        for (; i < K * N; ++i) C[i] = 0.0;
    }
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * K;
        const double* b = B + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const __m256d av = _mm256_set1_pd(a[k]);
            double* c = C + k * N;
            std::size_t j = 0;
            for (; j + 4 <= N; j += 4) {
                __m256d cv = _mm256_loadu_pd(c + j);
                cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j), cv);
                _mm256_storeu_pd(c + j, cv);
            }
            for (; j < N; ++j) c[j] += a[k] * b[j];
        }
    }
}

void adam_update_avx2(double* p, double* m, double* v, const double* g, std::size_t n,
                      double lr, double beta1, double beta2, double eps,
                      double bc1, double bc2) {
    const __m256d b1 = _mm256_set1_pd(beta1);
    const __m256d b2 = _mm256_set1_pd(beta2);
    const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d rbc1 = _mm256_set1_pd(1.0 / bc1);
    const __m256d rbc2 = _mm256_set1_pd(1.0 / bc2);
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d epsv = _mm256_set1_pd(eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        mv = _mm256_fmadd_pd(omb1, gv, _mm256_mul_pd(b1, mv));
        vv = _mm256_fmadd_pd(omb2, _mm256_mul_pd(gv, gv), _mm256_mul_pd(b2, vv));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_mul_pd(mv, rbc1);
        const __m256d vhat = _mm256_mul_pd(vv, rbc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
        __m256d pv = _mm256_loadu_pd(p + i);
        pv = _mm256_sub_pd(pv, _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom));
        _mm256_storeu_pd(p + i, pv);
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] * (1.0 / bc1);
        const double vhat = v[i] * (1.0 / bc2);
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops ops = {
        "avx2",
        axpy_avx2,
        scale_avx2,
        dot_avx2,
        sum_avx2,
        sumsq_diff_avx2,
        matmul_nn_avx2,
        matmul_nt_avx2,
        matmul_tn_avx2,
        adam_update_avx2,
    };
    return ops;
}

}  // namespace pttt::kernels

#endif  // x86-64
