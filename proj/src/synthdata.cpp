#include "pttt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

#include <nlohmann/json.hpp>

#include "pttt/common.hpp"
#include "pttt/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pttt {

const std::array<AnatomyInfo, 12>& anatomy_catalog() {
    static const std::array<AnatomyInfo, 12> catalog = {{
        {1, "bolus"},
        {2, "pharynx"},
        {3, "trachea"},
        {4, "epiglottis"},
        {5, "mandible"},
        {6, "c1"},
        {7, "c2"},
        {8, "c3"},
        {9, "c4"},
        {10, "c5"},
        {11, "c6"},
        {12, "c7"},
    }};
    return catalog;
}

const char* anatomy_name(int code) {
    for (const auto& a : anatomy_catalog())
        if (a.code == code) return a.name;
    throw ValidationError("unknown anatomy code: " + std::to_string(code));
}

const std::vector<int>& label_precedence() {
    static const std::vector<int> order = {1, 4, 2, 3, 5, 6, 7, 8, 9, 10, 11, 12};
    return order;
}

// ---------------------------------------------------------------------------
// Scene geometry
// ---------------------------------------------------------------------------

namespace {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double len(Vec2 a) { return std::sqrt(dot(a, a)); }

double sd_capsule(Vec2 p, Vec2 a, Vec2 b, double r) {
    const Vec2 ab = b - a;
    const double t = std::clamp(dot(p - a, ab) / std::max(dot(ab, ab), 1e-12), 0.0, 1.0);
    return len(p - (a + t * ab)) - r;
}

double sd_rounded_rect(Vec2 p, Vec2 c, Vec2 half, double angle, double corner) {
    const double ca = std::cos(-angle), sa = std::sin(-angle);
    const Vec2 q{ca * (p.x - c.x) - sa * (p.y - c.y), sa * (p.x - c.x) + ca * (p.y - c.y)};
    const Vec2 d{std::abs(q.x) - (half.x - corner), std::abs(q.y) - (half.y - corner)};
    const Vec2 dpos{std::max(d.x, 0.0), std::max(d.y, 0.0)};
    return len(dpos) + std::min(std::max(d.x, d.y), 0.0) - corner;
}

// Scaled-distance approximation; exact sign, slightly squeezed gradient.
double sd_ellipse(Vec2 p, Vec2 c, double ax, double ay, double angle) {
    const double ca = std::cos(-angle), sa = std::sin(-angle);
    const Vec2 q{ca * (p.x - c.x) - sa * (p.y - c.y), sa * (p.x - c.x) + ca * (p.y - c.y)};
    const double k = std::sqrt((q.x * q.x) / (ax * ax) + (q.y * q.y) / (ay * ay));
    return (k - 1.0) * std::min(ax, ay);
}

struct Capsule {
    Vec2 a, b;
    double r = 1.0;
};

struct RRect {
    Vec2 c;
    Vec2 half;
    double angle = 0.0;
    double corner = 1.0;
};

struct Polyline {
    std::vector<Vec2> pts;
    std::vector<double> radius;
    std::vector<double> cumlen;

    double total_length() const { return cumlen.empty() ? 0.0 : cumlen.back(); }

    // Point and tangent at arc-length fraction s in [0,1].
    void at(double s, Vec2& pos, Vec2& tan) const {
        const double target = std::clamp(s, 0.0, 1.0) * total_length();
        std::size_t i = 1;
        while (i + 1 < cumlen.size() && cumlen[i] < target) ++i;
        const double seg = cumlen[i] - cumlen[i - 1];
        const double t = seg > 0.0 ? (target - cumlen[i - 1]) / seg : 0.0;
        pos = pts[i - 1] + t * (pts[i] - pts[i - 1]);
        Vec2 d = pts[i] - pts[i - 1];
        const double l = std::max(len(d), 1e-12);
        tan = {d.x / l, d.y / l};
    }

    double sdf(Vec2 p) const {
        double best = 1e30;
        for (std::size_t i = 1; i < pts.size(); ++i) {
            const double r = 0.5 * (radius[i - 1] + radius[i]);
            best = std::min(best, sd_capsule(p, pts[i - 1], pts[i], r));
        }
        return best;
    }
};

struct SceneLayout {
    std::array<RRect, 7> vertebrae;
    std::array<double, 7> vert_intensity{};
    Capsule mandible;
    double mandible_i = 0.8;
    Capsule trachea;
    double trachea_i = 0.22;
    Polyline pharynx;
    double pharynx_i = 0.38;

    Vec2 epi_anchor;
    double epi_len = 0, epi_r = 0, epi_base_angle = 0, epi_amp = 0, epi_cycles = 0, epi_phase = 0;
    double epi_i = 0.62;

    double bolus_ax = 0, bolus_ay = 0, bolus_i = 0.13;
    double bolus_pulse_amp = 0, bolus_pulse_cycles = 0, bolus_pulse_phase = 0;
    double bolus_s0 = 0, bolus_s1 = 0;

    double bg_base = 0.5;
    double bg_a1 = 0, bg_fx1 = 0, bg_fy1 = 0, bg_p1 = 0;
    double bg_a2 = 0, bg_fx2 = 0, bg_fy2 = 0, bg_p2 = 0;
    double vignette = 0.06;
    double tex_amp = 0.03, tex_fx = 0, tex_fy = 0, tex_phase = 0;
};

SceneLayout make_layout(std::uint64_t seed, const SceneConfig& cfg) {
    Rng rng(seed_mix({seed, 0x7363656eULL}));  // "scen"
    const double W = cfg.width, H = cfg.height;
    SceneLayout L;

    // Cervical spine along a slightly bowed line on the right.
    const Vec2 top{(0.70 + rng.uniform(-0.02, 0.02)) * W, (0.14 + rng.uniform(-0.015, 0.015)) * H};
    const Vec2 bot{(0.78 + rng.uniform(-0.02, 0.02)) * W, (0.90 + rng.uniform(-0.015, 0.015)) * H};
    const double bow = (-0.045 + rng.uniform(-0.01, 0.01)) * W;
    for (int i = 0; i < 7; ++i) {
        const double t = (i + 0.5) / 7.0;
        Vec2 c = top + t * (bot - top);
        c.x += bow * 4.0 * t * (1.0 - t);
        const double hx = (0.046 + rng.uniform(-0.004, 0.004)) * W;
        const double hy = (0.034 + rng.uniform(-0.003, 0.003)) * H;
        Vec2 d = bot - top;
        const double tangent_angle = std::atan2(d.y, d.x);
        L.vertebrae[static_cast<std::size_t>(i)] =
            RRect{c, Vec2{hx, hy}, tangent_angle - 1.5707963267948966 + rng.uniform(-0.05, 0.05),
                  0.35 * std::min(hx, hy)};
        L.vert_intensity[static_cast<std::size_t>(i)] = 0.75 + rng.uniform(-0.03, 0.03);
    }

    L.mandible = Capsule{{(0.10 + rng.uniform(-0.02, 0.02)) * W, (0.16 + rng.uniform(-0.02, 0.02)) * H},
                         {(0.46 + rng.uniform(-0.02, 0.02)) * W, (0.30 + rng.uniform(-0.02, 0.02)) * H},
                         std::max((0.035 + rng.uniform(-0.004, 0.004)) * H, 2.0)};
    L.mandible_i = 0.82 + rng.uniform(-0.02, 0.02);

    L.trachea = Capsule{{(0.40 + rng.uniform(-0.015, 0.015)) * W, 0.60 * H},
                        {(0.43 + rng.uniform(-0.015, 0.015)) * W, 0.97 * H},
                        std::max((0.042 + rng.uniform(-0.004, 0.004)) * W, 2.0)};
    L.trachea_i = 0.22 + rng.uniform(-0.02, 0.02);

    // Pharynx: quadratic Bezier channel sampled as a capsule chain.
    const Vec2 p0{(0.52 + rng.uniform(-0.02, 0.02)) * W, (0.20 + rng.uniform(-0.01, 0.01)) * H};
    const Vec2 p1{(0.64 + rng.uniform(-0.02, 0.02)) * W, (0.45 + rng.uniform(-0.02, 0.02)) * H};
    const Vec2 p2{(0.455 + rng.uniform(-0.01, 0.01)) * W, (0.60 + rng.uniform(-0.01, 0.01)) * H};
    const double r0 = std::max((0.034 + rng.uniform(-0.003, 0.003)) * W, 2.0);
    const double r1 = std::max((0.050 + rng.uniform(-0.004, 0.004)) * W, 2.0);
    const int samples = 48;
    L.pharynx.pts.resize(samples + 1);
    L.pharynx.radius.resize(samples + 1);
    L.pharynx.cumlen.resize(samples + 1);
    for (int i = 0; i <= samples; ++i) {
        const double t = static_cast<double>(i) / samples;
        const double u = 1.0 - t;
        L.pharynx.pts[static_cast<std::size_t>(i)] =
            (u * u) * p0 + (2.0 * u * t) * p1 + (t * t) * p2;
        L.pharynx.radius[static_cast<std::size_t>(i)] = r0 + t * (r1 - r0);
        L.pharynx.cumlen[static_cast<std::size_t>(i)] =
            i == 0 ? 0.0
                   : L.pharynx.cumlen[static_cast<std::size_t>(i - 1)] +
                         len(L.pharynx.pts[static_cast<std::size_t>(i)] -
                             L.pharynx.pts[static_cast<std::size_t>(i - 1)]);
    }
    L.pharynx_i = 0.38 + rng.uniform(-0.02, 0.02);

    Vec2 mid, tan;
    L.pharynx.at(0.78, mid, tan);
    L.epi_anchor = mid + Vec2{-0.045 * W, -0.02 * H};
    L.epi_len = (0.085 + rng.uniform(-0.008, 0.008)) * H;
    L.epi_r = std::max(0.012 * H, 1.6);
    L.epi_base_angle = -1.1 + rng.uniform(-0.12, 0.12);  // radians, pointing up-right
    L.epi_amp = 0.18 + rng.uniform(-0.05, 0.05);
    L.epi_cycles = 1.0 + rng.uniform(0.0, 1.2);
    L.epi_phase = rng.uniform(0.0, 6.283185307179586);
    L.epi_i = 0.62 + rng.uniform(-0.02, 0.02);

    L.bolus_ax = std::max((0.050 + rng.uniform(-0.005, 0.005)) * W, 4.0);
    L.bolus_ay = std::max((0.033 + rng.uniform(-0.004, 0.004)) * W, 3.0);
    L.bolus_i = 0.13 + rng.uniform(-0.02, 0.02);
    L.bolus_pulse_amp = 0.18 + rng.uniform(-0.04, 0.04);
    L.bolus_pulse_cycles = 1.6 + rng.uniform(0.0, 0.8);
    L.bolus_pulse_phase = rng.uniform(0.0, 6.283185307179586);
    L.bolus_s0 = 0.05 + rng.uniform(0.0, 0.03);
    // Keep the per-frame centroid step under the configured bound no matter
    // how short the video is; 1.5 is the peak slope of smoothstep.
    const double full_span = 0.90;
    const double frames_span = cfg.frames > 1 ? cfg.frames - 1 : 1;
    const double allowed =
        cfg.max_bolus_step * 0.85 * frames_span / (1.5 * std::max(L.pharynx.total_length(), 1.0));
    L.bolus_s1 = L.bolus_s0 + std::min(full_span, allowed);

    L.bg_base = 0.50 + rng.uniform(-0.02, 0.02);
    L.bg_a1 = 0.05 + rng.uniform(-0.01, 0.01);
    L.bg_fx1 = rng.uniform(0.5, 2.0);
    L.bg_fy1 = rng.uniform(0.5, 2.0);
    L.bg_p1 = rng.uniform(0.0, 6.28);
    L.bg_a2 = 0.03 + rng.uniform(-0.01, 0.01);
    L.bg_fx2 = rng.uniform(1.5, 3.5);
    L.bg_fy2 = rng.uniform(1.5, 3.5);
    L.bg_p2 = rng.uniform(0.0, 6.28);
    L.tex_fx = rng.uniform(3.0, 6.0);
    L.tex_fy = rng.uniform(3.0, 6.0);
    L.tex_phase = rng.uniform(0.0, 6.28);
    return L;
}

constexpr double kEdge = 1.5;  // soft-edge width in pixels (image only)

struct Bounds {
    int x0, y0, x1, y1;  // inclusive-exclusive
};

Bounds clip_bounds(double x0, double y0, double x1, double y1, int w, int h) {
    Bounds b;
    b.x0 = std::max(0, static_cast<int>(std::floor(x0 - kEdge - 1)));
    b.y0 = std::max(0, static_cast<int>(std::floor(y0 - kEdge - 1)));
    b.x1 = std::min(w, static_cast<int>(std::ceil(x1 + kEdge + 2)));
    b.y1 = std::min(h, static_cast<int>(std::ceil(y1 + kEdge + 2)));
    return b;
}

void paint_and_mask(Image& img, BinaryMask* mask, const Bounds& b, double intensity,
                    const SceneLayout& L, const std::function<double(Vec2)>& sdf) {
    for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
            const Vec2 p{static_cast<double>(x), static_cast<double>(y)};
            const double d = sdf(p);
            if (d > kEdge) continue;
            if (mask && d <= 0.0) mask->at(y, x) = 1;
            double a = std::clamp(-d / kEdge, 0.0, 1.0);
            a = a * a * (3.0 - 2.0 * a);
            if (a <= 0.0) continue;
            const double tex = L.tex_amp * std::sin(6.283185307179586 *
                                                    (L.tex_fx * x / img.w + L.tex_fy * y / img.h) +
                                                    L.tex_phase);
            img.at(y, x) = (1.0 - a) * img.at(y, x) + a * std::clamp(intensity + tex, 0.0, 1.0);
        }
    }
}

double epi_angle(const SceneLayout& L, double tau) {
    return L.epi_base_angle +
           L.epi_amp * std::sin(6.283185307179586 * L.epi_cycles * tau + L.epi_phase);
}

void bolus_state(const SceneLayout& L, double tau, Vec2& center, Vec2& tangent, double& ax,
                 double& ay) {
    const double ss = tau * tau * (3.0 - 2.0 * tau);  // smoothstep easing
    const double s = L.bolus_s0 + (L.bolus_s1 - L.bolus_s0) * ss;
    L.pharynx.at(s, center, tangent);
    const double pulse =
        1.0 + L.bolus_pulse_amp *
                  std::sin(6.283185307179586 * L.bolus_pulse_cycles * tau + L.bolus_pulse_phase);
    ax = L.bolus_ax * pulse;
    ay = L.bolus_ay / pulse;
}

}  // namespace

LabelMap flatten_masks(const std::vector<BinaryMask>& anatomy_masks) {
    if (anatomy_masks.size() != 12) throw ShapeError("expected 12 anatomy masks");
    LabelMap lm;
    lm.h = anatomy_masks[0].h;
    lm.w = anatomy_masks[0].w;
    lm.v.assign(static_cast<std::size_t>(lm.h) * lm.w, 0);
    const auto& order = label_precedence();
    // Paint lowest precedence first so higher codes overwrite.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int code = *it;
        const BinaryMask& m = anatomy_masks[static_cast<std::size_t>(code - 1)];
        if (m.h != lm.h || m.w != lm.w) throw ShapeError("anatomy mask dims mismatch");
        for (std::size_t i = 0; i < m.v.size(); ++i)
            if (m.v[i]) lm.v[i] = static_cast<std::uint8_t>(code);
    }
    return lm;
}

VideoSequence generate_video(std::uint64_t seed, const SceneConfig& cfg) {
    if (cfg.frames < 1) throw ConfigError("video must have at least one frame");
    if (cfg.width <= 0 || cfg.height <= 0) throw ConfigError("resolution must be positive");
    if (cfg.resolution_divisor <= 0 || cfg.width % cfg.resolution_divisor != 0 ||
        cfg.height % cfg.resolution_divisor != 0)
        throw ConfigError("resolution must be divisible by " +
                          std::to_string(cfg.resolution_divisor));

    const SceneLayout L = make_layout(seed, cfg);
    const int W = cfg.width, H = cfg.height;

    // Static plate: background plus the anatomies that do not move.
    Image plate(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double u = static_cast<double>(x) / W, v = static_cast<double>(y) / H;
            const double rx = u - 0.5, ry = v - 0.5;
            double val = L.bg_base;
            val += L.bg_a1 * std::sin(6.283185307179586 * (L.bg_fx1 * u + L.bg_fy1 * v) + L.bg_p1);
            val += L.bg_a2 * std::sin(6.283185307179586 * (L.bg_fx2 * u + L.bg_fy2 * v) + L.bg_p2);
            val -= L.vignette * (rx * rx + ry * ry) * 4.0;
            plate.at(y, x) = std::clamp(val, 0.0, 1.0);
        }
    }

    std::vector<BinaryMask> static_masks(12, BinaryMask(H, W));

    // Paint order follows reverse label precedence so the image matches the map.
    for (int i = 6; i >= 0; --i) {
        const RRect& r = L.vertebrae[static_cast<std::size_t>(i)];
        const double ext = std::abs(r.half.x) + std::abs(r.half.y);
        const Bounds b = clip_bounds(r.c.x - ext, r.c.y - ext, r.c.x + ext, r.c.y + ext, W, H);
        paint_and_mask(plate, &static_masks[static_cast<std::size_t>(5 + i)], b,
                       L.vert_intensity[static_cast<std::size_t>(i)], L,
                       [&](Vec2 p) { return sd_rounded_rect(p, r.c, r.half, r.angle, r.corner); });
    }
    {
        const Capsule& c = L.mandible;
        const Bounds b = clip_bounds(std::min(c.a.x, c.b.x) - c.r, std::min(c.a.y, c.b.y) - c.r,
                                     std::max(c.a.x, c.b.x) + c.r, std::max(c.a.y, c.b.y) + c.r, W,
                                     H);
        paint_and_mask(plate, &static_masks[4], b, L.mandible_i, L,
                       [&](Vec2 p) { return sd_capsule(p, c.a, c.b, c.r); });
    }
    {
        const Capsule& c = L.trachea;
        const Bounds b = clip_bounds(std::min(c.a.x, c.b.x) - c.r, std::min(c.a.y, c.b.y) - c.r,
                                     std::max(c.a.x, c.b.x) + c.r, std::max(c.a.y, c.b.y) + c.r, W,
                                     H);
        paint_and_mask(plate, &static_masks[2], b, L.trachea_i, L,
                       [&](Vec2 p) { return sd_capsule(p, c.a, c.b, c.r); });
    }
    {
        double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30, rmax = 0;
        for (std::size_t i = 0; i < L.pharynx.pts.size(); ++i) {
            x0 = std::min(x0, L.pharynx.pts[i].x);
            y0 = std::min(y0, L.pharynx.pts[i].y);
            x1 = std::max(x1, L.pharynx.pts[i].x);
            y1 = std::max(y1, L.pharynx.pts[i].y);
            rmax = std::max(rmax, L.pharynx.radius[i]);
        }
        const Bounds b = clip_bounds(x0 - rmax, y0 - rmax, x1 + rmax, y1 + rmax, W, H);
        paint_and_mask(plate, &static_masks[1], b, L.pharynx_i, L,
                       [&](Vec2 p) { return L.pharynx.sdf(p); });
    }

    VideoSequence video;
    video.meta.seed = seed;
    video.meta.scene = cfg;
    video.frames.reserve(static_cast<std::size_t>(cfg.frames));
    video.masks.reserve(static_cast<std::size_t>(cfg.frames));
    video.label_maps.reserve(static_cast<std::size_t>(cfg.frames));

    for (int t = 0; t < cfg.frames; ++t) {
        const double tau = cfg.frames > 1 ? static_cast<double>(t) / (cfg.frames - 1) : 0.0;
        Image img = plate;
        std::vector<BinaryMask> masks = static_masks;

        // Epiglottis flap.
        {
            const double ang = epi_angle(L, tau);
            const Vec2 tip = L.epi_anchor + Vec2{L.epi_len * std::cos(ang), L.epi_len * std::sin(ang)};
            const Bounds b = clip_bounds(std::min(L.epi_anchor.x, tip.x) - L.epi_r,
                                         std::min(L.epi_anchor.y, tip.y) - L.epi_r,
                                         std::max(L.epi_anchor.x, tip.x) + L.epi_r,
                                         std::max(L.epi_anchor.y, tip.y) + L.epi_r, W, H);
            paint_and_mask(img, &masks[3], b, L.epi_i, L,
                           [&](Vec2 p) { return sd_capsule(p, L.epi_anchor, tip, L.epi_r); });
        }

        // Bolus travelling through the pharynx channel.
        {
            Vec2 c, tan;
            double ax, ay;
            bolus_state(L, tau, c, tan, ax, ay);
            const double ang = std::atan2(tan.y, tan.x);
            const double ext = std::max(ax, ay);
            const Bounds b = clip_bounds(c.x - ext, c.y - ext, c.x + ext, c.y + ext, W, H);
            paint_and_mask(img, &masks[0], b, L.bolus_i, L,
                           [&](Vec2 p) { return sd_ellipse(p, c, ax, ay, ang); });
        }

        video.label_maps.push_back(flatten_masks(masks));
        video.masks.push_back(std::move(masks));
        video.frames.push_back(std::move(img));
    }
    return video;
}

VideoSequence apply_domain_shift(const VideoSequence& video, const ShiftSpec& spec) {
    if (spec.noise_sigma < 0.0) throw ValidationError("shift noise sigma must be >= 0");
    if (!(spec.gamma > 0.0)) throw ValidationError("shift gamma must be positive");
    VideoSequence out = video;
    out.meta.shifted = true;
    out.meta.shift = spec;
    for (std::size_t t = 0; t < out.frames.size(); ++t) {
        Rng noise(seed_mix({spec.seed, 0x736866ULL, static_cast<std::uint64_t>(t)}));
        Image& f = out.frames[t];
        const bool has_noise = spec.noise_sigma > 0.0;
        for (double& v : f.v) {
            double x = spec.gamma == 1.0 ? v : std::pow(v, spec.gamma);
            x = spec.contrast * x + spec.brightness;
            if (has_noise) x += spec.noise_sigma * noise.normal();
            v = std::clamp(x, 0.0, 1.0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Split / manifest
// ---------------------------------------------------------------------------

std::vector<std::size_t> DatasetManifest::split_indices(const std::string& split) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) idx.push_back(i);
    return idx;
}

DatasetManifest split_dataset(const std::vector<VideoSequence>& videos, std::uint64_t seed) {
    const std::size_t n = videos.size();
    const std::size_t n_test = n / 5;  // floor(0.2 n); remainder goes to training
    if (n_test == 0 || n - n_test == 0)
        throw ConfigError("cannot split " + std::to_string(n) +
                          " videos 8:2 with both sides non-empty (need at least 5)");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed_mix({seed, 0x73706c6974ULL}));  // "split"
    rng.shuffle(order);

    std::vector<std::string> split(n, "train");
    for (std::size_t i = 0; i < n_test; ++i) split[order[i]] = "test";

    DatasetManifest manifest;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& v = videos[i];
        ManifestEntry e;
        e.name = v.meta.name;
        e.frames = v.frame_count();
        e.width = v.frames.empty() ? 0 : v.frames[0].w;
        e.height = v.frames.empty() ? 0 : v.frames[0].h;
        e.split = split[i];
        e.seed = v.meta.seed;
        e.shifted = v.meta.shifted;
        e.shift = v.meta.shift;
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// PGM + JSON persistence
// ---------------------------------------------------------------------------

void write_pgm(const std::string& path, int w, int h, const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() != static_cast<std::size_t>(w) * h)
        throw ShapeError("pgm payload size mismatch for " + path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed: " + path);
}

void read_pgm(const std::string& path, int& w, int& h, std::vector<std::uint8_t>& bytes) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw FormatError("not a binary PGM (P5): " + path);
    auto next_int = [&](int& out) {
        // Skip whitespace and '#' comments.
        int c = f.get();
        while (c == '#' || std::isspace(c)) {
            if (c == '#')
                while (c != '\n' && c != EOF) c = f.get();
            c = f.get();
        }
        if (c == EOF) throw FormatError("truncated PGM header: " + path);
        f.unget();
        if (!(f >> out)) throw FormatError("malformed PGM header: " + path);
    };
    int maxval = 0;
    next_int(w);
    next_int(h);
    next_int(maxval);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw FormatError("unsupported PGM header in " + path);
    f.get();  // single whitespace after maxval
    bytes.resize(static_cast<std::size_t>(w) * h);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError("truncated PGM payload: " + path);
}

std::vector<std::uint8_t> quantize_image(const Image& img) {
    std::vector<std::uint8_t> out(img.v.size());
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        const double v = std::clamp(img.v[i], 0.0, 1.0);
        out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

Image dequantize_image(int h, int w, const std::vector<std::uint8_t>& bytes) {
    Image img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.v[i] = bytes[i] / 255.0;
    return img;
}

namespace {

std::string frame_stem(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d", t);
    return buf;
}

std::string mask_file(int t, int code) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "frame_%03d_mask_%02d.pgm", t, code);
    return buf;
}

json shift_to_json(const ShiftSpec& s) {
    return json{{"gamma", s.gamma},
                {"noise_sigma", s.noise_sigma},
                {"brightness", s.brightness},
                {"contrast", s.contrast},
                {"seed", s.seed}};
}

ShiftSpec shift_from_json(const json& j) {
    ShiftSpec s;
    s.gamma = j.at("gamma").get<double>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.brightness = j.at("brightness").get<double>();
    s.contrast = j.at("contrast").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

}  // namespace

void save_dataset(const std::vector<VideoSequence>& videos, const DatasetManifest& manifest,
                  const std::string& directory) {
    if (videos.size() != manifest.entries.size())
        throw ValidationError("manifest entry count does not match video count");
    fs::create_directories(directory);

    json jman;
    jman["format_version"] = manifest.format_version;
    jman["entries"] = json::array();
    for (const auto& e : manifest.entries) {
        jman["entries"].push_back(json{{"name", e.name},
                                       {"frames", e.frames},
                                       {"width", e.width},
                                       {"height", e.height},
                                       {"split", e.split},
                                       {"seed", e.seed},
                                       {"shifted", e.shifted},
                                       {"shift", shift_to_json(e.shift)}});
    }
    std::ofstream mf(directory + "/manifest.json");
    if (!mf) throw FormatError("cannot write manifest in " + directory);
    mf << jman.dump(2) << "\n";

    for (const auto& v : videos) {
        const std::string vdir = directory + "/" + v.meta.name;
        fs::create_directories(vdir);

        json jmeta;
        jmeta["name"] = v.meta.name;
        jmeta["seed"] = v.meta.seed;
        jmeta["scene"] = json{{"frames", v.meta.scene.frames},
                              {"width", v.meta.scene.width},
                              {"height", v.meta.scene.height},
                              {"resolution_divisor", v.meta.scene.resolution_divisor},
                              {"max_bolus_step", v.meta.scene.max_bolus_step}};
        jmeta["shifted"] = v.meta.shifted;
        jmeta["shift"] = shift_to_json(v.meta.shift);
        std::ofstream metaf(vdir + "/meta.json");
        if (!metaf) throw FormatError("cannot write " + vdir + "/meta.json");
        metaf << jmeta.dump(2) << "\n";

        for (int t = 0; t < v.frame_count(); ++t) {
            const Image& img = v.frames[static_cast<std::size_t>(t)];
            write_pgm(vdir + "/" + frame_stem(t) + ".pgm", img.w, img.h, quantize_image(img));
            const LabelMap& lm = v.label_maps[static_cast<std::size_t>(t)];
            write_pgm(vdir + "/" + frame_stem(t) + "_labels.pgm", lm.w, lm.h, lm.v);
            for (const auto& a : anatomy_catalog()) {
                const BinaryMask& m = v.mask_of(t, a.code);
                std::vector<std::uint8_t> payload(m.v.size());
                for (std::size_t i = 0; i < m.v.size(); ++i) payload[i] = m.v[i] ? 255 : 0;
                write_pgm(vdir + "/" + mask_file(t, a.code), m.w, m.h, payload);
            }
        }
    }
}

std::pair<std::vector<VideoSequence>, DatasetManifest> load_dataset(const std::string& directory) {
    const std::string manifest_path = directory + "/manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw FormatError("missing manifest: " + manifest_path);
    json jman;
    try {
        mf >> jman;
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest " + manifest_path + ": " + e.what());
    }
    DatasetManifest manifest;
    manifest.format_version = jman.at("format_version").get<int>();
    if (manifest.format_version != 1)
        throw FormatError("unsupported dataset format_version " +
                          std::to_string(manifest.format_version) + " in " + manifest_path);

    std::vector<VideoSequence> videos;
    for (const auto& je : jman.at("entries")) {
        ManifestEntry e;
        e.name = je.at("name").get<std::string>();
        e.frames = je.at("frames").get<int>();
        e.width = je.at("width").get<int>();
        e.height = je.at("height").get<int>();
        e.split = je.at("split").get<std::string>();
        e.seed = je.at("seed").get<std::uint64_t>();
        e.shifted = je.at("shifted").get<bool>();
        e.shift = shift_from_json(je.at("shift"));
        manifest.entries.push_back(e);

        const std::string vdir = directory + "/" + e.name;
        if (!fs::is_directory(vdir)) throw FormatError("manifest names missing video dir: " + vdir);

        VideoSequence v;
        std::ifstream metaf(vdir + "/meta.json");
        if (!metaf) throw FormatError("missing " + vdir + "/meta.json");
        json jmeta;
        try {
            metaf >> jmeta;
        } catch (const json::exception& ex) {
            throw FormatError("malformed " + vdir + "/meta.json: " + ex.what());
        }
        v.meta.name = e.name;
        v.meta.seed = jmeta.at("seed").get<std::uint64_t>();
        const auto& js = jmeta.at("scene");
        v.meta.scene.frames = js.at("frames").get<int>();
        v.meta.scene.width = js.at("width").get<int>();
        v.meta.scene.height = js.at("height").get<int>();
        v.meta.scene.resolution_divisor = js.at("resolution_divisor").get<int>();
        v.meta.scene.max_bolus_step = js.at("max_bolus_step").get<double>();
        v.meta.shifted = jmeta.at("shifted").get<bool>();
        v.meta.shift = shift_from_json(jmeta.at("shift"));

        for (int t = 0; t < e.frames; ++t) {
            int w = 0, h = 0;
            std::vector<std::uint8_t> bytes;
            read_pgm(vdir + "/" + frame_stem(t) + ".pgm", w, h, bytes);
            if (w != e.width || h != e.height)
                throw FormatError("frame dims mismatch in " + vdir + "/" + frame_stem(t) + ".pgm");
            v.frames.push_back(dequantize_image(h, w, bytes));

            read_pgm(vdir + "/" + frame_stem(t) + "_labels.pgm", w, h, bytes);
            for (std::uint8_t b : bytes)
                if (b > 12)
                    throw ValidationError("label map value " + std::to_string(b) +
                                          " out of range 0..12 in " + vdir + "/" + frame_stem(t) +
                                          "_labels.pgm");
            LabelMap lm;
            lm.h = h;
            lm.w = w;
            lm.v = bytes;
            v.label_maps.push_back(std::move(lm));

            std::vector<BinaryMask> masks;
            for (const auto& a : anatomy_catalog()) {
                read_pgm(vdir + "/" + mask_file(t, a.code), w, h, bytes);
                BinaryMask m(h, w);
                for (std::size_t i = 0; i < bytes.size(); ++i) {
                    if (bytes[i] != 0 && bytes[i] != 255)
                        throw ValidationError("mask value must be 0 or 255 in " + vdir + "/" +
                                              mask_file(t, a.code));
                    m.v[i] = bytes[i] ? 1 : 0;
                }
                masks.push_back(std::move(m));
            }
            v.masks.push_back(std::move(masks));
        }
        videos.push_back(std::move(v));
    }
    return {std::move(videos), manifest};
}

}  // namespace pttt
