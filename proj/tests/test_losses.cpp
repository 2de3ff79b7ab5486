#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pttt/losses.hpp"
#include "pttt/rng.hpp"
#include "pttt/trainer.hpp"

using namespace pttt;

namespace {

// Independent oracles: direct transliteration of the formulas, kept separate
// from the implementation path in src/losses.cpp.
double oracle_dice(const std::vector<double>& p, const std::vector<double>& g) {
    double inter = 0, ps = 0, gs = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * g[i];
        ps += p[i];
        gs += g[i];
    }
    return 1.0 - (2.0 * inter + 1e-5) / (ps + gs + 1e-5);
}

double oracle_bce(const std::vector<double>& p, const std::vector<double>& g) {
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::min(std::max(p[i], 1e-7), 1.0 - 1e-7);
        acc += -(g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q));
    }
    return acc / static_cast<double>(p.size());
}

double oracle_mse(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

MaskProb grid_of(int h, int w, std::initializer_list<double> vals) {
    MaskProb m(h, w);
    std::size_t i = 0;
    for (double v : vals) m.v[i++] = v;
    return m;
}

BinaryMask mask_of(int h, int w, std::initializer_list<int> vals) {
    BinaryMask m(h, w);
    std::size_t i = 0;
    for (int v : vals) m.v[i++] = static_cast<std::uint8_t>(v);
    return m;
}

}  // namespace

TEST_CASE("dice loss: identity, derived 2x2 case, empty-empty") {
    // pred == gt (binary)
    const BinaryMask gt = mask_of(2, 2, {1, 1, 0, 0});
    MaskProb same(2, 2);
    for (std::size_t i = 0; i < 4; ++i) same.v[i] = gt.v[i];
    CHECK(dice_loss(same, gt).value == doctest::Approx(0.0).epsilon(1e-5));

    // gt = [[1,1],[0,0]], pred = all ones -> about 1/3 (oracle-exact)
    const MaskProb ones = grid_of(2, 2, {1, 1, 1, 1});
    const double expect = oracle_dice({1, 1, 1, 1}, {1, 1, 0, 0});
    CHECK(dice_loss(ones, gt).value == doctest::Approx(expect).epsilon(1e-9));
    CHECK(dice_loss(ones, gt).value == doctest::Approx(1.0 / 3.0).epsilon(1e-5));

    // both empty: epsilon-regularized to ~0
    const BinaryMask zero_gt = mask_of(2, 2, {0, 0, 0, 0});
    const MaskProb zero_p = grid_of(2, 2, {0, 0, 0, 0});
    CHECK(dice_loss(zero_p, zero_gt).value == doctest::Approx(0.0).epsilon(1e-9));

    MaskProb wrong(3, 2, 0.0);
    CHECK_THROWS_AS(dice_loss(wrong, gt), ShapeError);
}

TEST_CASE("bce loss: analytic half, identity, derived 1x2 case") {
    const BinaryMask gt = mask_of(2, 2, {1, 0, 1, 0});
    const MaskProb half(2, 2, 0.5);
    CHECK(bce_loss(half, gt).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    MaskProb exact(2, 2);
    for (std::size_t i = 0; i < 4; ++i) exact.v[i] = gt.v[i];
    CHECK(bce_loss(exact, gt).value <= -std::log(1.0 - 1e-7) + 1e-12);

    const MaskProb p = grid_of(1, 2, {0.9, 0.2});
    const BinaryMask g = mask_of(1, 2, {1, 0});
    const double expect = oracle_bce({0.9, 0.2}, {1, 0});
    CHECK(bce_loss(p, g).value == doctest::Approx(expect).epsilon(1e-12));
    CHECK(bce_loss(p, g).value ==
          doctest::Approx((-std::log(0.9) - std::log(0.8)) / 2.0).epsilon(1e-9));
}

TEST_CASE("main task loss is dice plus bce with components recorded") {
    const MaskProb ones = grid_of(2, 2, {1, 1, 1, 1});
    const BinaryMask gt = mask_of(2, 2, {1, 1, 0, 0});
    const LossValue lv = main_task_loss(ones, gt);
    CHECK(lv.value ==
          doctest::Approx(dice_loss(ones, gt).value + bce_loss(ones, gt).value).epsilon(1e-12));
    CHECK(lv.components.at("dice") + lv.components.at("bce") ==
          doctest::Approx(lv.value).epsilon(1e-15));
}

TEST_CASE("aux task loss equals bce") {
    const MaskProb p = grid_of(1, 2, {0.9, 0.2});
    const BinaryMask g = mask_of(1, 2, {1, 0});
    CHECK(aux_task_loss(p, g).value == bce_loss(p, g).value);
    const MaskProb half(4, 4, 0.5);
    const BinaryMask g2(4, 4, 1);
    CHECK(aux_task_loss(half, g2).value == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("train loss combines with lambda") {
    LossValue main{1.0, {}};
    LossValue aux{0.5, {}};
    CHECK(train_loss(main, aux, 0.2).value == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(train_loss(main, aux, 0.0).value == 1.0);
    CHECK_THROWS_AS(train_loss(main, aux, -0.1), ValidationError);

    // The default weighting in TrainConfig matches the documented 0.2.
    CHECK(TrainConfig{}.lambda == 0.2);
}

TEST_CASE("consistency loss: identity, maximal disagreement, derived 1x2") {
    const MaskProb a = grid_of(1, 2, {0.8, 0.2});
    CHECK(consistency_loss(a, a).value == 0.0);

    const MaskProb ones(3, 3, 1.0);
    const MaskProb zeros(3, 3, 0.0);
    CHECK(consistency_loss(ones, zeros).value == 1.0);

    const MaskProb b = grid_of(1, 2, {0.6, 0.6});
    CHECK(consistency_loss(a, b).value == doctest::Approx(oracle_mse({0.8, 0.2}, {0.6, 0.6}))
                                              .epsilon(1e-12));
    CHECK(consistency_loss(a, b).value == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("consistency loss is exactly symmetric") {
    Rng rng(4);
    MaskProb a(8, 8), b(8, 8);
    for (auto& v : a.v) v = rng.uniform();
    for (auto& v : b.v) v = rng.uniform();
    CHECK(consistency_loss(a, b).value == consistency_loss(b, a).value);
}

TEST_CASE("losses are invariant under 2x tiling (mean reduction)") {
    Rng rng(9);
    const int n = 6;
    MaskProb p(n, n);
    BinaryMask g(n, n);
    for (auto& v : p.v) v = rng.uniform(0.05, 0.95);
    for (auto& v : g.v) v = rng.bernoulli(0.4) ? 1 : 0;

    MaskProb p2(2 * n, 2 * n);
    BinaryMask g2(2 * n, 2 * n);
    for (int y = 0; y < 2 * n; ++y)
        for (int x = 0; x < 2 * n; ++x) {
            p2.at(y, x) = p.at(y % n, x % n);
            g2.at(y, x) = g.at(y % n, x % n);
        }
    CHECK(bce_loss(p2, g2).value == doctest::Approx(bce_loss(p, g).value).epsilon(1e-12));
    CHECK(consistency_loss(p2, p2).value == 0.0);
    MaskProb q = p;
    for (auto& v : q.v) v = 1.0 - v;
    MaskProb q2 = p2;
    for (auto& v : q2.v) v = 1.0 - v;
    CHECK(consistency_loss(p2, q2).value ==
          doctest::Approx(consistency_loss(p, q).value).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(17);
    const int n = 5;
    MaskProb p(n, n);
    BinaryMask g(n, n);
    for (auto& v : p.v) v = rng.uniform(0.1, 0.9);
    for (auto& v : g.v) v = rng.bernoulli(0.5) ? 1 : 0;
    MaskProb q(n, n);
    for (auto& v : q.v) v = rng.uniform(0.1, 0.9);

    Grid2 dd(n, n), db(n, n), dc1(n, n), dc2(n, n);
    dice_loss_backward(p, g, 1.0, dd);
    bce_loss_backward(p, g, 1.0, db);
    consistency_loss_backward(p, q, 1.0, dc1, dc2);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < p.v.size(); i += 3) {
        MaskProb pp = p, pm = p;
        pp.v[i] += eps;
        pm.v[i] -= eps;
        CHECK(dd.v[i] == doctest::Approx((dice_loss(pp, g).value - dice_loss(pm, g).value) /
                                         (2 * eps)).epsilon(1e-6));
        CHECK(db.v[i] == doctest::Approx((bce_loss(pp, g).value - bce_loss(pm, g).value) /
                                         (2 * eps)).epsilon(1e-6));
        CHECK(dc1.v[i] ==
              doctest::Approx((consistency_loss(pp, q).value - consistency_loss(pm, q).value) /
                              (2 * eps)).epsilon(1e-6));
    }
}
