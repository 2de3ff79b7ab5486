#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace pttt {

// FNV-1a 64-bit over raw bytes. Content digests are used to assert the
// frozen-parameter contracts; equality of digests stands in for bitwise
// equality of the underlying arrays.
class Fnv1a64 {
public:
    Fnv1a64& update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fnv1a64& update(const std::string& s) { return update(s.data(), s.size()); }

    template <typename T>
    Fnv1a64& update_pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        return update(&v, sizeof(T));
    }

    std::uint64_t value() const { return h_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t v = h_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[v & 0xf];
            v >>= 4;
        }
        return out;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace pttt
