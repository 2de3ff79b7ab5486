#include "pttt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "pttt/common.hpp"

namespace pttt {

BinaryMask binarize(const MaskProb& prob, double threshold) {
    BinaryMask out(prob.h, prob.w);
    for (std::size_t i = 0; i < prob.v.size(); ++i) out.v[i] = prob.v[i] >= threshold ? 1 : 0;
    return out;
}

namespace {
void check_same_dims(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.h != b.h || a.w != b.w) throw ShapeError(std::string(what) + ": mask dims mismatch");
}
}  // namespace

double dsc(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_dims(pred, gt, "dsc");
    std::size_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        p += pred.v[i];
        g += gt.v[i];
        inter += static_cast<std::size_t>(pred.v[i] & gt.v[i]);
    }
    if (p + g == 0) return 1.0;  // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::optional<double> sensitivity(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_dims(pred, gt, "sensitivity");
    std::size_t inter = 0, g = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        g += gt.v[i];
        inter += static_cast<std::size_t>(pred.v[i] & gt.v[i]);
    }
    if (g == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(g);
}

BinaryMask boundary_pixels(const BinaryMask& mask) {
    BinaryMask out(mask.h, mask.w);
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) {
            if (!mask.at(y, x)) continue;
            const bool interior = y > 0 && y + 1 < mask.h && x > 0 && x + 1 < mask.w &&
                                  mask.at(y - 1, x) && mask.at(y + 1, x) && mask.at(y, x - 1) &&
                                  mask.at(y, x + 1);
            if (!interior) out.at(y, x) = 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher).
// ---------------------------------------------------------------------------

namespace {

constexpr double kInf = 1e30;

void dt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n) + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[static_cast<std::size_t>(q)] + q * q) -
                    (f[static_cast<std::size_t>(v[static_cast<std::size_t>(k)])] +
                     v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)])) /
                   (2.0 * q - 2.0 * v[static_cast<std::size_t>(k)]);
        while (s <= z[static_cast<std::size_t>(k)]) {
            --k;
            s = ((f[static_cast<std::size_t>(q)] + q * q) -
                 (f[static_cast<std::size_t>(v[static_cast<std::size_t>(k)])] +
                  v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)])) /
                (2.0 * q - 2.0 * v[static_cast<std::size_t>(k)]);
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
        const int vk = v[static_cast<std::size_t>(k)];
        d[static_cast<std::size_t>(q)] = (q - vk) * (q - vk) + f[static_cast<std::size_t>(vk)];
    }
}

// Squared distance to the nearest set pixel of `sites`.
std::vector<double> squared_edt(const BinaryMask& sites) {
    const int h = sites.h, w = sites.w;
    std::vector<double> grid(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sites.v[i] ? 0.0 : kInf;

    std::vector<double> col(static_cast<std::size_t>(h)), dcol(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * w + x];
        dt_1d(col, dcol, h);
        for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = dcol[static_cast<std::size_t>(y)];
    }
    std::vector<double> row(static_cast<std::size_t>(w)), drow(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = grid[static_cast<std::size_t>(y) * w + x];
        dt_1d(row, drow, w);
        for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = drow[static_cast<std::size_t>(x)];
    }
    return grid;
}

std::vector<double> distances_to(const BinaryMask& from_boundary, const std::vector<double>& d2,
                                 int w) {
    std::vector<double> out;
    for (int y = 0; y < from_boundary.h; ++y)
        for (int x = 0; x < from_boundary.w; ++x)
            if (from_boundary.at(y, x))
                out.push_back(std::sqrt(d2[static_cast<std::size_t>(y) * w + x]));
    return out;
}

}  // namespace

std::optional<SurfaceDistances> surface_distances(const BinaryMask& a, const BinaryMask& b) {
    check_same_dims(a, b, "surface_distances");
    if (a.empty_mask() || b.empty_mask()) return std::nullopt;
    const BinaryMask ba = boundary_pixels(a);
    const BinaryMask bb = boundary_pixels(b);
    const std::vector<double> d2_to_b = squared_edt(bb);
    const std::vector<double> d2_to_a = squared_edt(ba);
    SurfaceDistances out;
    out.a_to_b = distances_to(ba, d2_to_b, a.w);
    out.b_to_a = distances_to(bb, d2_to_a, a.w);
    return out;
}

double percentile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw ValidationError("percentile of an empty list");
    if (sorted.size() == 1) return sorted[0];
    const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b) {
    const auto sd = surface_distances(a, b);
    if (!sd) return std::nullopt;
    std::vector<double> pooled = sd->a_to_b;
    pooled.insert(pooled.end(), sd->b_to_a.begin(), sd->b_to_a.end());
    std::sort(pooled.begin(), pooled.end());
    return percentile_sorted(pooled, 95.0);
}

std::optional<double> asd(const BinaryMask& a, const BinaryMask& b) {
    const auto sd = surface_distances(a, b);
    if (!sd) return std::nullopt;
    double sum = 0.0;
    for (double d : sd->a_to_b) sum += d;
    for (double d : sd->b_to_a) sum += d;
    const std::size_t n = sd->a_to_b.size() + sd->b_to_a.size();
    return sum / static_cast<double>(n);
}

MetricsRecord evaluate_instance(const MaskProb& pred, const BinaryMask& gt, int anatomy_label,
                                int frame_index, double threshold) {
    const BinaryMask bin = binarize(pred, threshold);
    MetricsRecord r;
    r.anatomy_label = anatomy_label;
    r.frame_index = frame_index;
    r.dsc = dsc(bin, gt);

    const auto sens = sensitivity(bin, gt);
    r.sensitivity_defined = sens.has_value();
    r.sensitivity = sens.value_or(std::numeric_limits<double>::quiet_NaN());

    const auto h = hd95(bin, gt);
    const auto a = asd(bin, gt);
    r.distances_defined = h.has_value();
    r.hd95 = h.value_or(std::numeric_limits<double>::quiet_NaN());
    r.asd = a.value_or(std::numeric_limits<double>::quiet_NaN());
    return r;
}

MetricsSummary aggregate_records(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw ConfigError("no metrics records to aggregate");
    std::map<int, AnatomyAggregate> by_label;
    AnatomyAggregate overall;

    auto accumulate = [](AnatomyAggregate& agg, const MetricsRecord& r) {
        agg.dsc += r.dsc;
        agg.count += 1;
        if (r.sensitivity_defined) agg.sensitivity += r.sensitivity;
        if (r.distances_defined) {
            agg.hd95 += r.hd95;
            agg.asd += r.asd;
        } else {
            agg.undefined_count += 1;
        }
    };

    std::map<int, int> sens_counts;
    int overall_sens_count = 0;
    for (const auto& r : records) {
        auto& agg = by_label[r.anatomy_label];
        agg.anatomy_label = r.anatomy_label;
        accumulate(agg, r);
        accumulate(overall, r);
        if (r.sensitivity_defined) {
            sens_counts[r.anatomy_label] += 1;
            overall_sens_count += 1;
        }
    }

    auto finalize = [](AnatomyAggregate& agg, int sens_count) {
        const int defined = agg.count - agg.undefined_count;
        agg.dsc /= agg.count;
        agg.sensitivity = sens_count > 0 ? agg.sensitivity / sens_count
                                         : std::numeric_limits<double>::quiet_NaN();
        if (defined > 0) {
            agg.hd95 /= defined;
            agg.asd /= defined;
        } else {
            agg.hd95 = std::numeric_limits<double>::quiet_NaN();
            agg.asd = std::numeric_limits<double>::quiet_NaN();
        }
    };

    MetricsSummary out;
    for (auto& [label, agg] : by_label) {
        finalize(agg, sens_counts[label]);
        out.per_anatomy.push_back(agg);
    }
    overall.anatomy_label = 0;
    finalize(overall, overall_sens_count);
    out.overall = overall;
    return out;
}

}  // namespace pttt
