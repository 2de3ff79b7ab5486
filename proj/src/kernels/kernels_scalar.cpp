#include <cmath>

#include "pttt/kernels.hpp"

// Scalar reference kernels. Plain loops in the canonical accumulation order;
// every vector backend is tested against these.

namespace pttt::kernels {
namespace {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_scalar(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

double sumsq_diff_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// C[M x N] (+)= A[M x K] * B[K x N]
void matmul_nn_scalar(const double* A, const double* B, double* C,
                      std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        double* c = C + m * N;
        if (!accumulate)
            for (std::size_t j = 0; j < N; ++j) c[j] = 0.0;
        const double* a = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[k];
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M x K] (+)= A[M x N] * B[K x N]^T
void matmul_nt_scalar(const double* A, const double* B, double* C,
                      std::size_t M, std::size_t N, std::size_t K, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * N;
        double* c = C + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double* b = B + k * N;
            double s = 0.0;
            for (std::size_t j = 0; j < N; ++j) s += a[j] * b[j];
            if (accumulate)
                c[k] += s;
            else
                c[k] = s;
        }
    }
}

// C[K x N] (+)= A[M x K]^T * B[M x N]
void matmul_tn_scalar(const double* A, const double* B, double* C,
                      std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < K * N; ++i) C[i] = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * K;
        const double* b = B + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[k];
            double* c = C + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void adam_update_scalar(double* p, double* m, double* v, const double* g, std::size_t n,
                        double lr, double beta1, double beta2, double eps,
                        double bc1, double bc2) {
    const double omb1 = 1.0 - beta1;
    const double omb2 = 1.0 - beta2;
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + omb1 * g[i];
        v[i] = beta2 * v[i] + omb2 * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops ops = {
        "scalar",
        axpy_scalar,
        scale_scalar,
        dot_scalar,
        sum_scalar,
        sumsq_diff_scalar,
        matmul_nn_scalar,
        matmul_nt_scalar,
        matmul_tn_scalar,
        adam_update_scalar,
    };
    return ops;
}

}  // namespace pttt::kernels
