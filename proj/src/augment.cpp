#include "pttt/augment.hpp"

#include <algorithm>
#include <cmath>

#include "pttt/common.hpp"
#include "pttt/rng.hpp"

namespace pttt {

Grid2 rotate90_cw(const Grid2& g, int quarters) {
    Grid2 cur = g;
    quarters = ((quarters % 4) + 4) % 4;
    for (int q = 0; q < quarters; ++q) {
        // (x, y) -> (H - 1 - y, x)
        Grid2 next(cur.w, cur.h);
        for (int y = 0; y < cur.h; ++y)
            for (int x = 0; x < cur.w; ++x) next.at(x, cur.h - 1 - y) = cur.at(y, x);
        cur = std::move(next);
    }
    return cur;
}

Grid2 flip_horizontal(const Grid2& g) {
    Grid2 out(g.h, g.w);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) out.at(y, g.w - 1 - x) = g.at(y, x);
    return out;
}

Grid2 flip_vertical(const Grid2& g) {
    Grid2 out(g.h, g.w);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) out.at(g.h - 1 - y, x) = g.at(y, x);
    return out;
}

PointPrompt transform_point(const PointPrompt& p, const AugmentationSpec& spec, int h, int w) {
    double x = p.x, y = p.y;
    int cur_h = h, cur_w = w;
    const int q = ((spec.rotation_quarters % 4) + 4) % 4;
    for (int i = 0; i < q; ++i) {
        const double nx = cur_h - 1 - y;
        const double ny = x;
        x = nx;
        y = ny;
        std::swap(cur_h, cur_w);
    }
    if (spec.horizontal_flip) x = cur_w - 1 - x;
    if (spec.vertical_flip) y = cur_h - 1 - y;
    return PointPrompt{x, y, p.label};
}

std::pair<Image, std::vector<PointPrompt>> apply_augmentation(
    const Image& image, const std::vector<PointPrompt>& points, const AugmentationSpec& spec) {
    for (const auto& p : points) validate_point(p, image.h, image.w);
    if (!(spec.gamma > 0.0)) throw ValidationError("augmentation gamma must be positive");
    if (spec.noise_sigma < 0.0) throw ValidationError("augmentation noise sigma must be >= 0");

    Image out = rotate90_cw(image, spec.rotation_quarters);
    if (spec.horizontal_flip) out = flip_horizontal(out);
    if (spec.vertical_flip) out = flip_vertical(out);

    std::vector<PointPrompt> tpts;
    tpts.reserve(points.size());
    for (const auto& p : points) tpts.push_back(transform_point(p, spec, image.h, image.w));

    const bool unit_gamma = spec.gamma == 1.0;
    Rng noise(seed_mix({spec.seed, 0x6e6f697365ULL}));
    const bool has_noise = spec.noise_sigma > 0.0;
    for (double& v : out.v) {
        double x = unit_gamma ? v : std::pow(v, spec.gamma);
        x += spec.brightness_shift;
        if (has_noise) x += spec.noise_sigma * noise.normal();
        v = std::clamp(x, 0.0, 1.0);
    }
    return {std::move(out), std::move(tpts)};
}

Grid2 apply_geometric(const Grid2& g, const AugmentationSpec& spec) {
    Grid2 out = rotate90_cw(g, spec.rotation_quarters);
    if (spec.horizontal_flip) out = flip_horizontal(out);
    if (spec.vertical_flip) out = flip_vertical(out);
    return out;
}

MaskProb invert_geometric(const MaskProb& mask, const AugmentationSpec& spec) {
    MaskProb out = mask;
    // Reverse order of application, each factor self- or quarter-inverted.
    if (spec.vertical_flip) out = flip_vertical(out);
    if (spec.horizontal_flip) out = flip_horizontal(out);
    const int q = ((spec.rotation_quarters % 4) + 4) % 4;
    if (q) out = rotate90_cw(out, 4 - q);
    return out;
}

Image crop_resize_image(const Image& img, int y0, int x0, int ch, int cw, int out_h, int out_w) {
    if (ch <= 0 || cw <= 0 || y0 < 0 || x0 < 0 || y0 + ch > img.h || x0 + cw > img.w)
        throw ValidationError("crop window outside image");
    Image out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        double sy = (y + 0.5) * ch / out_h - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(ch - 1));
        const int iy0 = static_cast<int>(sy);
        const int iy1 = std::min(iy0 + 1, ch - 1);
        const double fy = sy - iy0;
        for (int x = 0; x < out_w; ++x) {
            double sx = (x + 0.5) * cw / out_w - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(cw - 1));
            const int ix0 = static_cast<int>(sx);
            const int ix1 = std::min(ix0 + 1, cw - 1);
            const double fx = sx - ix0;
            const double v00 = img.at(y0 + iy0, x0 + ix0);
            const double v01 = img.at(y0 + iy0, x0 + ix1);
            const double v10 = img.at(y0 + iy1, x0 + ix0);
            const double v11 = img.at(y0 + iy1, x0 + ix1);
            out.at(y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                           fy * ((1 - fx) * v10 + fx * v11);
        }
    }
    return out;
}

BinaryMask crop_resize_mask(const BinaryMask& m, int y0, int x0, int ch, int cw, int out_h,
                            int out_w) {
    if (ch <= 0 || cw <= 0 || y0 < 0 || x0 < 0 || y0 + ch > m.h || x0 + cw > m.w)
        throw ValidationError("crop window outside mask");
    BinaryMask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        double sy = (y + 0.5) * ch / out_h - 0.5;
        int iy = static_cast<int>(std::lround(sy));
        iy = std::clamp(iy, 0, ch - 1);
        for (int x = 0; x < out_w; ++x) {
            double sx = (x + 0.5) * cw / out_w - 0.5;
            int ix = static_cast<int>(std::lround(sx));
            ix = std::clamp(ix, 0, cw - 1);
            out.at(y, x) = m.at(y0 + iy, x0 + ix);
        }
    }
    return out;
}

Image mirror_image(const Image& img) { return flip_horizontal(img); }

BinaryMask mirror_mask(const BinaryMask& m) {
    BinaryMask out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) out.at(y, m.w - 1 - x) = m.at(y, x);
    return out;
}

}  // namespace pttt
