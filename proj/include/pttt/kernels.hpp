#pragma once

#include <cstddef>
#include <string>

namespace pttt::kernels {

// Arithmetic inner loops used by the model, optimizer, and losses.
// A scalar reference implementation always exists; AVX2 (x86-64) and NEON
// (aarch64) variants are selected at runtime and equivalence-tested against
// the reference. Vector variants may reassociate sums, so cross-backend
// results agree to rounding, not bit-exactly; within one backend every
// kernel is deterministic.
struct Ops {
    const char* name;

    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // x[i] *= a
    void (*scale)(double a, double* x, std::size_t n);
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    // sum_i (a[i] - b[i])^2
    double (*sumsq_diff)(const double* a, const double* b, std::size_t n);

    // Row-major matrix products. Leading dimensions equal logical widths.
    //   matmul_nn: C[M x N] (+)= A[M x K] * B[K x N]
    //   matmul_nt: C[M x K] (+)= A[M x N] * B[K x N]^T
    //   matmul_tn: C[K x N] (+)= A[M x K]^T * B[M x N]
    void (*matmul_nn)(const double* A, const double* B, double* C,
                      std::size_t M, std::size_t K, std::size_t N, bool accumulate);
    void (*matmul_nt)(const double* A, const double* B, double* C,
                      std::size_t M, std::size_t N, std::size_t K, bool accumulate);
    void (*matmul_tn)(const double* A, const double* B, double* C,
                      std::size_t M, std::size_t K, std::size_t N, bool accumulate);

    // One Adam step over a parameter array. bc1/bc2 are the bias-correction
    // denominators (1 - beta^t) for the current step count.
    void (*adam_update)(double* p, double* m, double* v, const double* g, std::size_t n,
                        double lr, double beta1, double beta2, double eps,
                        double bc1, double bc2);
};

enum class Backend { scalar, avx2, neon };

// Active kernel table (auto-detected on first use).
const Ops& active();

Backend active_backend();
std::string backend_name(Backend b);

// Force a specific backend; throws pttt::ConfigError if unsupported on this
// host. Intended for tests and the PTTT_SIMD environment override
// (scalar|avx2|neon|auto).
void force_backend(Backend b);
void reset_backend();  // back to auto-detection

bool backend_supported(Backend b);

// Reference table, always available (used by equivalence tests).
const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

}  // namespace pttt::kernels
