#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "pttt/kernels.hpp"
#include "pttt/rng.hpp"

using namespace pttt;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

bool close(double a, double b, double tol) {
    return std::abs(a - b) <= tol * (1.0 + std::abs(a) + std::abs(b));
}

// Every available backend must agree with the scalar reference to rounding.
std::vector<const kernels::Ops*> vector_backends() {
    std::vector<const kernels::Ops*> out;
#if defined(__x86_64__) || defined(_M_X64)
    if (kernels::backend_supported(kernels::Backend::avx2)) out.push_back(&kernels::avx2_ops());
#endif
#if defined(__aarch64__)
    if (kernels::backend_supported(kernels::Backend::neon)) out.push_back(&kernels::neon_ops());
#endif
    return out;
}

}  // namespace

TEST_CASE("elementwise kernels match the scalar reference") {
    Rng rng(7);
    const auto& ref = kernels::scalar_ops();
    for (const auto* ops : vector_backends()) {
        for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 255u, 1024u}) {
            auto x = random_vec(rng, n);
            auto y0 = random_vec(rng, n);
            auto y1 = y0;
            ref.axpy(1.7, x.data(), y0.data(), n);
            ops->axpy(1.7, x.data(), y1.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(y0[i] == doctest::Approx(y1[i]).epsilon(1e-14));

            auto s0 = y0;
            auto s1 = y0;
            ref.scale(-0.3, s0.data(), n);
            ops->scale(-0.3, s1.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(s0[i] == s1[i]);

            auto b = random_vec(rng, n);
            CHECK(close(ref.dot(x.data(), b.data(), n), ops->dot(x.data(), b.data(), n), 1e-13));
            CHECK(close(ref.sum(x.data(), n), ops->sum(x.data(), n), 1e-13));
            CHECK(close(ref.sumsq_diff(x.data(), b.data(), n),
                        ops->sumsq_diff(x.data(), b.data(), n), 1e-13));
        }
    }
}

TEST_CASE("matmul variants match the scalar reference") {
    Rng rng(13);
    const auto& ref = kernels::scalar_ops();
    struct Shape {
        std::size_t m, k, n;
    };
    for (const auto* ops : vector_backends()) {
        for (Shape s : {Shape{1, 1, 1}, Shape{2, 3, 5}, Shape{8, 9, 16}, Shape{17, 54, 33},
                        Shape{64, 64, 77}}) {
            auto A = random_vec(rng, s.m * s.k);
            auto B = random_vec(rng, s.k * s.n);
            std::vector<double> C0(s.m * s.n), C1(s.m * s.n);
            ref.matmul_nn(A.data(), B.data(), C0.data(), s.m, s.k, s.n, false);
            ops->matmul_nn(A.data(), B.data(), C1.data(), s.m, s.k, s.n, false);
            for (std::size_t i = 0; i < C0.size(); ++i) CHECK(close(C0[i], C1[i], 1e-12));

            // accumulate mode adds on top of existing values
            auto C2 = C0;
            auto C3 = C0;
            ref.matmul_nn(A.data(), B.data(), C2.data(), s.m, s.k, s.n, true);
            ops->matmul_nn(A.data(), B.data(), C3.data(), s.m, s.k, s.n, true);
            for (std::size_t i = 0; i < C2.size(); ++i) CHECK(close(C2[i], C3[i], 1e-12));

            auto A2 = random_vec(rng, s.m * s.n);
            auto B2 = random_vec(rng, s.k * s.n);
            std::vector<double> D0(s.m * s.k), D1(s.m * s.k);
            ref.matmul_nt(A2.data(), B2.data(), D0.data(), s.m, s.n, s.k, false);
            ops->matmul_nt(A2.data(), B2.data(), D1.data(), s.m, s.n, s.k, false);
            for (std::size_t i = 0; i < D0.size(); ++i) CHECK(close(D0[i], D1[i], 1e-12));

            auto A3 = random_vec(rng, s.m * s.k);
            auto B3 = random_vec(rng, s.m * s.n);
            std::vector<double> E0(s.k * s.n), E1(s.k * s.n);
            ref.matmul_tn(A3.data(), B3.data(), E0.data(), s.m, s.k, s.n, false);
            ops->matmul_tn(A3.data(), B3.data(), E1.data(), s.m, s.k, s.n, false);
            for (std::size_t i = 0; i < E0.size(); ++i) CHECK(close(E0[i], E1[i], 1e-12));
        }
    }
}

TEST_CASE("matmul_nn agrees with a transpose-based oracle") {
    // C = A*B computed by explicit triple loop over transposed B.
    Rng rng(99);
    const std::size_t M = 11, K = 23, N = 19;
    auto A = random_vec(rng, M * K);
    auto B = random_vec(rng, K * N);
    std::vector<double> expect(M * N, 0.0);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += A[m * K + k] * B[k * N + n];
            expect[m * N + n] = s;
        }
    std::vector<double> got(M * N);
    kernels::active().matmul_nn(A.data(), B.data(), got.data(), M, K, N, false);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("adam kernels match the scalar reference") {
    Rng rng(21);
    const auto& ref = kernels::scalar_ops();
    for (const auto* ops : vector_backends()) {
        const std::size_t n = 133;
        auto g = random_vec(rng, n);
        auto p0 = random_vec(rng, n), p1 = p0;
        auto m0 = random_vec(rng, n, 0.1), m1 = m0;
        std::vector<double> v0(n, 0.01), v1 = v0;
        ref.adam_update(p0.data(), m0.data(), v0.data(), g.data(), n, 1e-3, 0.9, 0.999, 1e-8,
                        0.1, 0.001);
        ops->adam_update(p1.data(), m1.data(), v1.data(), g.data(), n, 1e-3, 0.9, 0.999, 1e-8,
                         0.1, 0.001);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(close(p0[i], p1[i], 1e-13));
            CHECK(close(m0[i], m1[i], 1e-13));
            CHECK(close(v0[i], v1[i], 1e-13));
        }
    }
}

TEST_CASE("backend forcing and detection") {
    CHECK(kernels::backend_supported(kernels::Backend::scalar));
    kernels::force_backend(kernels::Backend::scalar);
    CHECK(kernels::active_backend() == kernels::Backend::scalar);
    CHECK(kernels::active().name == std::string("scalar"));
    kernels::reset_backend();
#if defined(__x86_64__) || defined(_M_X64)
    if (kernels::backend_supported(kernels::Backend::avx2)) {
        kernels::force_backend(kernels::Backend::avx2);
        CHECK(kernels::active().name == std::string("avx2"));
        kernels::reset_backend();
    } else {
        CHECK_THROWS_AS(kernels::force_backend(kernels::Backend::avx2), ConfigError);
    }
#endif
}
