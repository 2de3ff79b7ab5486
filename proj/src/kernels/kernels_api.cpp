#include <atomic>
#include <cstdlib>
#include <mutex>

#include "pttt/common.hpp"
#include "pttt/kernels.hpp"

namespace pttt::kernels {
namespace {

Backend detect() {
#if defined(__aarch64__)
    return Backend::neon;
#elif defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::avx2;
    return Backend::scalar;
#else
    return Backend::scalar;
#endif
}

Backend from_env_or_detect() {
    if (const char* e = std::getenv("PTTT_SIMD")) {
        const std::string s(e);
        if (s == "scalar") return Backend::scalar;
        if (s == "avx2") {
            if (!backend_supported(Backend::avx2))
                throw ConfigError("PTTT_SIMD=avx2 requested but AVX2 is unavailable on this host");
            return Backend::avx2;
        }
        if (s == "neon") {
            if (!backend_supported(Backend::neon))
                throw ConfigError("PTTT_SIMD=neon requested but NEON is unavailable on this host");
            return Backend::neon;
        }
        if (s != "auto" && !s.empty())
            throw ConfigError("PTTT_SIMD must be one of scalar|avx2|neon|auto, got '" + s + "'");
    }
    return detect();
}

std::mutex g_mutex;
bool g_initialized = false;
Backend g_backend = Backend::scalar;

const Ops& ops_for(Backend b) {
    switch (b) {
        case Backend::scalar:
            return scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
        case Backend::avx2:
            return avx2_ops();
#endif
#if defined(__aarch64__)
        case Backend::neon:
            return neon_ops();
#endif
        default:
            return scalar_ops();
    }
}

Backend current() {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (!g_initialized) {
        g_backend = from_env_or_detect();
        g_initialized = true;
    }
    return g_backend;
}

}  // namespace

bool backend_supported(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Backend::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const Ops& active() { return ops_for(current()); }

Backend active_backend() { return current(); }

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar:
            return "scalar";
        case Backend::avx2:
            return "avx2";
        case Backend::neon:
            return "neon";
    }
    return "unknown";
}

void force_backend(Backend b) {
    if (!backend_supported(b))
        throw ConfigError("kernel backend '" + backend_name(b) + "' is not supported on this host");
    std::lock_guard<std::mutex> lock(g_mutex);
    g_backend = b;
    g_initialized = true;
}

void reset_backend() {
    std::lock_guard<std::mutex> lock(g_mutex);
    g_initialized = false;
}

}  // namespace pttt::kernels
