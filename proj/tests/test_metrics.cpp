#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pttt/metrics.hpp"
#include "pttt/rng.hpp"

using namespace pttt;

namespace {

// Brute-force oracle, independent of the distance-transform implementation:
// boundaries by neighbour scan, distances by all-pairs minimum.
std::vector<std::pair<int, int>> oracle_boundary(const BinaryMask& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            bool edge = false;
            const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w || !m.at(ny, nx)) edge = true;
            }
            if (edge) out.emplace_back(y, x);
        }
    return out;
}

std::vector<double> oracle_directed(const std::vector<std::pair<int, int>>& from,
                                    const std::vector<std::pair<int, int>>& to) {
    std::vector<double> out;
    for (const auto& [fy, fx] : from) {
        double best = 1e300;
        for (const auto& [ty, tx] : to) {
            const double d = std::sqrt(double((fy - ty) * (fy - ty) + (fx - tx) * (fx - tx)));
            best = std::min(best, d);
        }
        out.push_back(best);
    }
    return out;
}

double oracle_percentile(std::vector<double> pooled, double p) {
    std::sort(pooled.begin(), pooled.end());
    const double rank = p / 100.0 * static_cast<double>(pooled.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, pooled.size() - 1);
    return pooled[lo] + (rank - lo) * (pooled[hi] - pooled[lo]);
}

BinaryMask random_blob_mask(Rng& rng, int n) {
    // Smooth random field thresholded; resample until non-empty.
    for (;;) {
        BinaryMask m(n, n);
        const double cx = rng.uniform(4, n - 4), cy = rng.uniform(4, n - 4);
        const double r = rng.uniform(2.0, n / 3.0);
        const double e = rng.uniform(0.6, 1.6);
        const double a = rng.uniform(0.0, 3.14);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double ux = (x - cx) * std::cos(a) + (y - cy) * std::sin(a);
                const double uy = -(x - cx) * std::sin(a) + (y - cy) * std::cos(a);
                const double d = std::sqrt(ux * ux * e + uy * uy / e) +
                                 1.5 * std::sin(0.8 * ux) * std::cos(0.6 * uy);
                if (d <= r) m.at(y, x) = 1;
            }
        if (!m.empty_mask()) return m;
    }
}

BinaryMask single_pixel(int n, int y, int x) {
    BinaryMask m(n, n);
    m.at(y, x) = 1;
    return m;
}

}  // namespace

TEST_CASE("binarize: threshold, tie-break at >=, zeros") {
    MaskProb p(2, 2, 0.6);
    CHECK(binarize(p, 0.5).count() == 4);
    MaskProb tie(1, 1, 0.5);
    CHECK(binarize(tie, 0.5).at(0, 0) == 1);  // >= convention
    MaskProb z(3, 3, 0.0);
    CHECK(binarize(z, 0.5).empty_mask());
}

TEST_CASE("dsc: identity, disjoint, overlap arithmetic, conventions") {
    BinaryMask a(8, 8);
    for (int i = 0; i < 4; ++i) a.at(2, 2 + i % 2 + 2 * (i / 2)) = 1;
    CHECK(dsc(a, a) == 1.0);

    BinaryMask b(8, 8);
    b.at(6, 6) = 1;
    CHECK(dsc(a, b) == 0.0);

    // |P| = 4 covering half of |G| = 4 with overlap 2 -> 0.5
    BinaryMask p(8, 8), g(8, 8);
    p.at(0, 0) = p.at(0, 1) = p.at(0, 2) = p.at(0, 3) = 1;
    g.at(0, 2) = g.at(0, 3) = g.at(1, 2) = g.at(1, 3) = 1;
    CHECK(dsc(p, g) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(dsc(p, g) == dsc(g, p));  // symmetric

    BinaryMask e1(4, 4), e2(4, 4);
    CHECK(dsc(e1, e2) == 1.0);  // both empty
}

TEST_CASE("sensitivity: superset, half coverage, empty gt, asymmetry") {
    BinaryMask g(6, 6);
    g.at(1, 1) = g.at(1, 2) = 1;
    BinaryMask p(6, 6, 1);  // predicts everything
    CHECK(sensitivity(p, g).value() == 1.0);

    BinaryMask half(6, 6);
    half.at(1, 1) = 1;
    CHECK(sensitivity(half, g).value() == doctest::Approx(0.5).epsilon(1e-12));

    BinaryMask empty(6, 6);
    CHECK(!sensitivity(p, empty).has_value());

    // Asymmetry witness: sens(half, g) != sens(g, half)
    CHECK(sensitivity(g, half).value() == 1.0);
    CHECK(sensitivity(half, g).value() != sensitivity(g, half).value());
}

TEST_CASE("surface distances: identical masks and two single pixels") {
    Rng rng(3);
    const BinaryMask m = random_blob_mask(rng, 16);
    const auto sd = surface_distances(m, m);
    REQUIRE(sd.has_value());
    for (double d : sd->a_to_b) CHECK(d == 0.0);
    for (double d : sd->b_to_a) CHECK(d == 0.0);

    const BinaryMask a = single_pixel(8, 0, 0);
    const BinaryMask b = single_pixel(8, 4, 3);  // (y,x) offset (4,3) -> distance 5
    const auto sd2 = surface_distances(a, b);
    REQUIRE(sd2.has_value());
    REQUIRE(sd2->a_to_b.size() == 1);
    CHECK(sd2->a_to_b[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(sd2->b_to_a[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(hd95(a, b).value() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(asd(a, b).value() == doctest::Approx(5.0).epsilon(1e-12));

    const BinaryMask empty(8, 8);
    CHECK(!surface_distances(a, empty).has_value());
    CHECK(!hd95(a, empty).has_value());
}

TEST_CASE("hd95/asd match the brute-force oracle on random mask pairs") {
    Rng rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        const BinaryMask a = random_blob_mask(rng, 32);
        const BinaryMask b = random_blob_mask(rng, 32);

        const auto ba = oracle_boundary(a);
        const auto bb = oracle_boundary(b);
        auto d_ab = oracle_directed(ba, bb);
        auto d_ba = oracle_directed(bb, ba);
        std::vector<double> pooled = d_ab;
        pooled.insert(pooled.end(), d_ba.begin(), d_ba.end());
        const double oracle_hd = oracle_percentile(pooled, 95.0);
        double oracle_mean = 0;
        for (double d : pooled) oracle_mean += d;
        oracle_mean /= static_cast<double>(pooled.size());

        CHECK(hd95(a, b).value() == doctest::Approx(oracle_hd).epsilon(1e-9));
        CHECK(asd(a, b).value() == doctest::Approx(oracle_mean).epsilon(1e-9));

        // Pooled definition is symmetric under operand swap.
        CHECK(hd95(a, b).value() == doctest::Approx(hd95(b, a).value()).epsilon(1e-12));
        CHECK(asd(a, b).value() == doctest::Approx(asd(b, a).value()).epsilon(1e-12));
    }
}

TEST_CASE("percentile interpolation: 95 zeros and five tens") {
    std::vector<double> pooled(95, 0.0);
    pooled.resize(100, 10.0);
    std::sort(pooled.begin(), pooled.end());
    const double direct = oracle_percentile(pooled, 95.0);
    CHECK(percentile_sorted(pooled, 95.0) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(percentile_sorted(pooled, 95.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("translation invariance of all four metrics") {
    Rng rng(7);
    BinaryMask a = random_blob_mask(rng, 20);
    BinaryMask b = random_blob_mask(rng, 20);
    const int sy = 6, sx = 9, n = 40;
    BinaryMask a2(n, n), b2(n, n), a3(n, n), b3(n, n);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            a2.at(y, x) = a.at(y, x);
            b2.at(y, x) = b.at(y, x);
            a3.at(y + sy, x + sx) = a.at(y, x);
            b3.at(y + sy, x + sx) = b.at(y, x);
        }
    CHECK(dsc(a2, b2) == doctest::Approx(dsc(a3, b3)).epsilon(1e-12));
    CHECK(hd95(a2, b2).value() == doctest::Approx(hd95(a3, b3).value()).epsilon(1e-12));
    CHECK(asd(a2, b2).value() == doctest::Approx(asd(a3, b3).value()).epsilon(1e-12));
    if (sensitivity(a2, b2))
        CHECK(sensitivity(a2, b2).value() ==
              doctest::Approx(sensitivity(a3, b3).value()).epsilon(1e-12));
}

TEST_CASE("aggregation: perfect predictions, undefined exclusion, empty error") {
    std::vector<MetricsRecord> records;
    for (int a = 1; a <= 3; ++a) {
        MetricsRecord r;
        r.anatomy_label = a;
        r.frame_index = 0;
        r.dsc = 1.0;
        r.hd95 = 0.0;
        r.asd = 0.0;
        r.sensitivity = 1.0;
        records.push_back(r);
    }
    const MetricsSummary s = aggregate_records(records);
    CHECK(s.per_anatomy.size() == 3);
    CHECK(s.overall.dsc == 1.0);
    CHECK(s.overall.hd95 == 0.0);
    CHECK(s.overall.asd == 0.0);
    CHECK(s.overall.sensitivity == 1.0);

    MetricsRecord undef;
    undef.anatomy_label = 1;
    undef.dsc = 0.0;
    undef.distances_defined = false;
    undef.sensitivity_defined = false;
    undef.hd95 = undef.asd = undef.sensitivity = std::numeric_limits<double>::quiet_NaN();
    records.push_back(undef);
    const MetricsSummary s2 = aggregate_records(records);
    CHECK(s2.overall.undefined_count == 1);
    CHECK(s2.overall.hd95 == 0.0);  // NaN excluded from the distance mean
    CHECK(s2.overall.dsc == doctest::Approx(0.75).epsilon(1e-12));

    CHECK_THROWS_AS(aggregate_records({}), ConfigError);
}

TEST_CASE("evaluate_instance wires the undefined flags") {
    MaskProb pred(8, 8, 0.0);
    BinaryMask gt(8, 8);
    gt.at(3, 3) = 1;
    const MetricsRecord r = evaluate_instance(pred, gt, 2, 5);
    CHECK(r.anatomy_label == 2);
    CHECK(r.frame_index == 5);
    CHECK(r.dsc == 0.0);
    CHECK(!r.distances_defined);   // empty prediction
    CHECK(r.sensitivity_defined);  // gt non-empty
    CHECK(r.sensitivity == 0.0);
}
