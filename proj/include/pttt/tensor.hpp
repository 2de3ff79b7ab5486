#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pttt/common.hpp"

namespace pttt {

// Row-major H x W grid of doubles. Grayscale images and probability maps.
struct Grid2 {
    int h = 0, w = 0;
    std::vector<double> v;

    Grid2() = default;
    Grid2(int h_, int w_, double fill = 0.0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), fill) {}

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
    bool all_in_unit() const {
        for (double x : v)
            if (!(x >= 0.0 && x <= 1.0)) return false;
        return true;
    }
};

using Image = Grid2;
using MaskProb = Grid2;

// Binary mask, values exactly 0 or 1.
struct BinaryMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    BinaryMask() = default;
    BinaryMask(int h_, int w_, std::uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), fill) {}

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : v) n += b;
        return n;
    }
    bool empty_mask() const { return count() == 0; }
};

// C x H x W volume; feature maps and intermediate activations.
struct Volume {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Volume() = default;
    Volume(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

    double* plane(int ci) { return v.data() + static_cast<std::size_t>(ci) * h * w; }
    const double* plane(int ci) const { return v.data() + static_cast<std::size_t>(ci) * h * w; }
    double& at(int ci, int y, int x) {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    double at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    std::size_t size() const { return v.size(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

using FeatureMap = Volume;

// Spatial prompts, image coordinates, x right / y down.
struct PointPrompt {
    double x = 0.0;
    double y = 0.0;
    int label = 1;  // foreground indicator; always 1 here
};

struct BoxPrompt {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
};

inline void validate_point(const PointPrompt& p, int h, int w) {
    if (!(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h))
        throw ValidationError("point prompt (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                              ") outside image bounds " + std::to_string(w) + "x" + std::to_string(h));
}

inline void validate_box(const BoxPrompt& b, int h, int w) {
    if (!(b.x_min < b.x_max && b.y_min < b.y_max))
        throw ValidationError("box prompt corners must satisfy x_min < x_max and y_min < y_max");
    if (!(b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max < w && b.y_max < h))
        throw ValidationError("box prompt outside image bounds");
}

}  // namespace pttt
