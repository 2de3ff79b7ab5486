#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "pttt/augment.hpp"
#include "pttt/model.hpp"
#include "pttt/rng.hpp"
#include "pttt/trainer.hpp"

using namespace pttt;

namespace {

ArchConfig tiny_arch() {
    ArchConfig a;
    a.image_size = 32;
    a.enc_channels = {4, 8, 12, 16};
    a.embed_dim = 16;
    a.dec_channels = {8, 6};
    a.rot_head_hidden = 8;
    return a;
}

Image blob_image(int n, double base = 0.4) {
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double dx = (x - n / 2.0) / n, dy = (y - n / 2.0) / n;
            img.at(y, x) = std::clamp(base + 0.3 * std::exp(-40.0 * (dx * dx + dy * dy)) +
                                          0.1 * std::sin(0.3 * x) * std::cos(0.2 * y),
                                      0.0, 1.0);
        }
    return img;
}

BinaryMask disc_mask(int n, double cx, double cy, double r) {
    BinaryMask m(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(y, x) = 1;
    return m;
}

}  // namespace

TEST_CASE("init_params is deterministic and seed sensitive") {
    const ArchConfig arch = tiny_arch();
    const ModelParams a = init_params(0, arch);
    const ModelParams b = init_params(0, arch);
    const ModelParams c = init_params(1, arch);
    for (const auto& comp : model_components()) {
        CHECK(param_digest(a, comp) == param_digest(b, comp));
    }
    CHECK(param_digest(a, "encoder") != param_digest(c, "encoder"));
    CHECK(param_digest(a, "dseg") != param_digest(a, "daux"));
}

TEST_CASE("degenerate arch configs are rejected") {
    ArchConfig a = tiny_arch();
    a.embed_dim = 0;
    a.enc_channels.back() = 0;
    CHECK_THROWS_AS(init_params(0, a), ConfigError);
    ArchConfig b = tiny_arch();
    b.image_size = 40;  // not divisible by 16
    CHECK_THROWS_AS(init_params(0, b), ConfigError);
}

TEST_CASE("encode_image shape contract and determinism") {
    ArchConfig arch;  // defaults: 256, s=16, d=64
    arch.image_size = 256;
    const ModelParams p = init_params(0, arch);
    const Image img = blob_image(256);
    const FeatureMap f1 = encode_image(img, p);
    CHECK(f1.c == 64);
    CHECK(f1.h == 16);
    CHECK(f1.w == 16);
    const FeatureMap f2 = encode_image(img, p);
    CHECK(f1.v == f2.v);  // bit-identical

    Image bad = img;
    bad.at(3, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(encode_image(bad, p), ValidationError);

    Image odd(40, 40, 0.5);
    CHECK_THROWS_AS(encode_image(odd, p), ShapeError);
}

TEST_CASE("prompt encoding: determinism, validation, grid injectivity") {
    const ArchConfig arch = tiny_arch();
    const ModelParams p = init_params(0, arch);

    const auto e1 = encode_prompt(PointPrompt{10, 20, 1}, p, 32, 32);
    const auto e2 = encode_prompt(PointPrompt{10, 20, 1}, p, 32, 32);
    CHECK(e1.tokens == e2.tokens);

    CHECK_THROWS_AS(encode_prompt(BoxPrompt{10, 5, 10, 20}, p, 32, 32), ValidationError);
    CHECK_THROWS_AS(encode_prompt(PointPrompt{-1, 0, 1}, p, 32, 32), ValidationError);

    // Injectivity of the positional encoding over every grid coordinate.
    std::set<std::string> seen;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const auto pe = positional_encoding(arch, x, y, 32, 32);
            std::string key;
            key.reserve(pe.size() * 8);
            for (double v : pe) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g,", v);
                key += buf;
            }
            CHECK(seen.insert(key).second);
        }
}

TEST_CASE("forward_main: range, shape, determinism, unsaturated init") {
    const ArchConfig arch = tiny_arch();
    const ModelParams p = init_params(0, arch);
    const Image img = blob_image(32);
    const BoxPrompt box{8, 8, 24, 24};

    const MaskProb m1 = forward_main(img, box, p);
    CHECK(m1.h == 32);
    CHECK(m1.w == 32);
    for (double v : m1.v) CHECK((v > 0.0 && v < 1.0));
    const MaskProb m2 = forward_main(img, box, p);
    CHECK(m1.v == m2.v);

    // Untrained model on a constant image stays far from saturation.
    Image constant(32, 32, 0.5);
    const MaskProb mc = forward_main(constant, box, p);
    double mean = 0.0;
    for (double v : mc.v) mean += v;
    mean /= static_cast<double>(mc.v.size());
    CHECK(mean > 0.05);
    CHECK(mean < 0.95);
    // Regression window around the observed init behaviour.
    CHECK(mean == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("forward_aux: point conditioning is live, corner point is valid") {
    const ArchConfig arch = tiny_arch();
    const ModelParams p = init_params(3, arch);
    const Image img = blob_image(32);

    const MaskProb a = forward_aux(img, PointPrompt{6, 6, 1}, p);
    const MaskProb b = forward_aux(img, PointPrompt{25, 22, 1}, p);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        max_diff = std::max(max_diff, std::abs(a.v[i] - b.v[i]));
    CHECK(max_diff > 1e-9);

    const MaskProb c = forward_aux(img, PointPrompt{0, 0, 1}, p);
    CHECK(c.h == 32);
    for (double v : c.v) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("param_digest: identity, update sensitivity, unknown component") {
    const ArchConfig arch = tiny_arch();
    ModelParams p = init_params(0, arch);
    const std::string before = param_digest(p, "dseg");
    CHECK(param_digest(p, "dseg") == before);

    CHECK_THROWS_AS(param_digest(p, "decoder_typo"), ValidationError);

    // Single-element perturbation flips the digest; restoring restores it.
    auto& arr = p.set.at("dseg.conv0.w");
    const double orig = arr.data[5];
    arr.data[5] = orig + 1e-12;
    CHECK(param_digest(p, "dseg") != before);
    arr.data[5] = orig;
    CHECK(param_digest(p, "dseg") == before);
}

namespace {

double gradcheck_max_rel_error(const TrainConfig& cfg, bool heads, int n_coords,
                               std::uint64_t seed) {
    const ArchConfig arch = tiny_arch();
    ModelParams params = init_params(seed, arch);

    std::vector<TrainSample> batch;
    TrainSample s1;
    s1.image = blob_image(32);
    s1.gt = disc_mask(32, 16, 14, 6);
    s1.box = BoxPrompt{9, 7, 23, 21};
    s1.point = PointPrompt{16, 14, 1};
    TrainSample s2;
    s2.image = blob_image(32, 0.55);
    s2.gt = disc_mask(32, 10, 20, 5);
    s2.box = BoxPrompt{4, 14, 16, 26};
    s2.point = PointPrompt{11, 19, 1};
    if (heads) {
        for (TrainSample* s : {&s1, &s2}) {
            s->rot_label = 1;
            s->rotated = rotate90_cw(s->image, 1);
            s->has_mae = true;
            s->masked_image = s->image;
            s->masked_pixels.assign(s->image.v.size(), 0);
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 32; ++x) {
                    s->masked_image.at(y, x) = 0.0;
                    s->masked_pixels[static_cast<std::size_t>(y) * 32 + x] = 1;
                }
        }
    }
    batch.push_back(std::move(s1));
    batch.push_back(std::move(s2));

    ParamSet grads = ParamSet::zeros_like(params.set);
    train_loss_and_grads(batch, params, cfg, &grads);

    auto evaluator = [&](const ModelParams& p) {
        const LossValue l = train_loss_and_grads(batch, p, cfg, nullptr);
        return heads ? l.components.at("objective") : l.value;
    };

    // Random coordinates across the components that receive gradient.
    std::vector<std::string> pool;
    for (const auto& arr : params.set.arrays()) {
        const std::string comp = component_of(arr.name);
        if (!heads && (comp == "rot_head" || comp == "recon_head")) continue;
        pool.push_back(arr.name);
    }
    Rng rng(seed_mix({seed, 0x6763ULL}));
    std::vector<ParamCoord> coords;
    for (int i = 0; i < n_coords; ++i) {
        const auto& name = pool[rng.index(pool.size())];
        coords.push_back({name, rng.index(params.set.at(name).numel())});
    }

    const auto fd = finite_difference_gradient(evaluator, params, coords, 1e-4);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double a = grads.at(coords[i].array).data[coords[i].index];
        const double denom = std::max({std::abs(a), std::abs(fd[i]), 1e-6});
        max_rel = std::max(max_rel, std::abs(a - fd[i]) / denom);
    }
    return max_rel;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
    TrainConfig cfg;
    cfg.lambda = 0.2;
    cfg.train_baseline_heads = false;
    CHECK(gradcheck_max_rel_error(cfg, false, 60, 11) < 1e-5);
}

TEST_CASE("gradients with baseline heads enabled also pass the oracle") {
    TrainConfig cfg;
    cfg.lambda = 0.2;
    cfg.train_baseline_heads = true;
    cfg.head_loss_weight = 0.1;
    CHECK(gradcheck_max_rel_error(cfg, true, 50, 12) < 1e-5);
}

TEST_CASE("rotation loss at init is chance level") {
    const ArchConfig arch = tiny_arch();
    const ModelParams p = init_params(0, arch);
    RotationCache cache;
    const double loss = rotation_forward(blob_image(32), 2, p, &cache);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(0.05));
}
