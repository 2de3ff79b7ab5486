#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pttt/digest.hpp"
#include "pttt/rng.hpp"
#include "pttt/synthdata.hpp"

using namespace pttt;
namespace fs = std::filesystem;

namespace {

SceneConfig small_scene(int frames = 6, int size = 64) {
    SceneConfig c;
    c.frames = frames;
    c.width = size;
    c.height = size;
    return c;
}

std::string video_digest(const VideoSequence& v) {
    Fnv1a64 h;
    for (const auto& f : v.frames) h.update(f.v.data(), f.v.size() * sizeof(double));
    for (const auto& frame_masks : v.masks)
        for (const auto& m : frame_masks) h.update(m.v.data(), m.v.size());
    for (const auto& lm : v.label_maps) h.update(lm.v.data(), lm.v.size());
    return h.hex();
}

std::string masks_digest(const VideoSequence& v) {
    Fnv1a64 h;
    for (const auto& frame_masks : v.masks)
        for (const auto& m : frame_masks) h.update(m.v.data(), m.v.size());
    return h.hex();
}

std::pair<double, double> mask_centroid(const BinaryMask& m) {
    double sy = 0, sx = 0, n = 0;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) {
                sy += y;
                sx += x;
                n += 1;
            }
    return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("generate_video is deterministic and validates config") {
    const SceneConfig cfg = small_scene();
    const VideoSequence a = generate_video(42, cfg);
    const VideoSequence b = generate_video(42, cfg);
    CHECK(video_digest(a) == video_digest(b));
    const VideoSequence c = generate_video(43, cfg);
    CHECK(video_digest(a) != video_digest(c));

    SceneConfig bad = cfg;
    bad.width = 60;  // not divisible by 16
    CHECK_THROWS_AS(generate_video(0, bad), ConfigError);
    SceneConfig zero = cfg;
    zero.frames = 0;
    CHECK_THROWS_AS(generate_video(0, zero), ConfigError);
}

TEST_CASE("every anatomy is present in every frame, labels stay in 0..12") {
    const VideoSequence v = generate_video(7, small_scene(8, 64));
    for (int t = 0; t < v.frame_count(); ++t) {
        for (const auto& a : anatomy_catalog())
            CHECK(!v.mask_of(t, a.code).empty_mask());
        for (std::uint8_t code : v.label_maps[static_cast<std::size_t>(t)].v) CHECK(code <= 12);
        for (double px : v.frames[static_cast<std::size_t>(t)].v)
            CHECK((px >= 0.0 && px <= 1.0));
    }
}

TEST_CASE("label map equals precedence-flattened masks; bolus wins overlaps") {
    const VideoSequence v = generate_video(11, small_scene(8, 64));
    int overlap_frames = 0;
    for (int t = 0; t < v.frame_count(); ++t) {
        const LabelMap recomputed = flatten_masks(v.masks[static_cast<std::size_t>(t)]);
        CHECK(recomputed.v == v.label_maps[static_cast<std::size_t>(t)].v);

        const BinaryMask& bolus = v.mask_of(t, 1);
        const BinaryMask& pharynx = v.mask_of(t, 2);
        bool any_overlap = false;
        for (std::size_t i = 0; i < bolus.v.size(); ++i) {
            if (bolus.v[i] && pharynx.v[i]) {
                any_overlap = true;
                CHECK(v.label_maps[static_cast<std::size_t>(t)].v[i] == 1);  // bolus code wins
            }
        }
        if (any_overlap) ++overlap_frames;
    }
    // The bolus travels along the pharynx channel, so overlap holds for most frames.
    CHECK(overlap_frames >= v.frame_count() * 2 / 3);
}

TEST_CASE("bolus motion is temporally smooth") {
    const SceneConfig cfg = small_scene(24, 128);
    const VideoSequence v = generate_video(5, cfg);
    for (int t = 1; t < v.frame_count(); ++t) {
        const auto [x0, y0] = mask_centroid(v.mask_of(t - 1, 1));
        const auto [x1, y1] = mask_centroid(v.mask_of(t, 1));
        const double step = std::hypot(x1 - x0, y1 - y0);
        CHECK(step < cfg.max_bolus_step);
    }
}

TEST_CASE("domain shift: identity, mask invariance, determinism") {
    const VideoSequence v = generate_video(3, small_scene());
    ShiftSpec identity;
    const VideoSequence same = apply_domain_shift(v, identity);
    for (std::size_t t = 0; t < v.frames.size(); ++t) CHECK(same.frames[t].v == v.frames[t].v);

    ShiftSpec spec{0.6, 0.1, 0.0, 1.0, 99};
    const VideoSequence shifted = apply_domain_shift(v, spec);
    CHECK(masks_digest(shifted) == masks_digest(v));
    double mean0 = 0, mean1 = 0;
    for (double px : v.frames[0].v) mean0 += px;
    for (double px : shifted.frames[0].v) mean1 += px;
    CHECK(std::abs(mean0 - mean1) / static_cast<double>(v.frames[0].v.size()) > 1e-3);

    const VideoSequence shifted2 = apply_domain_shift(v, spec);
    CHECK(video_digest(shifted) == video_digest(shifted2));
    CHECK(shifted.meta.shifted);
}

TEST_CASE("split: 10 -> 8/2, 5 -> 4/1, too few videos rejected") {
    auto make_videos = [](int n) {
        std::vector<VideoSequence> vs;
        for (int i = 0; i < n; ++i) {
            VideoSequence v = generate_video(static_cast<std::uint64_t>(i), small_scene(2, 64));
            v.meta.name = "v" + std::to_string(i);
            vs.push_back(std::move(v));
        }
        return vs;
    };
    const auto m10 = split_dataset(make_videos(10), 0);
    CHECK(m10.split_indices("train").size() == 8);
    CHECK(m10.split_indices("test").size() == 2);

    const auto m5 = split_dataset(make_videos(5), 0);
    CHECK(m5.split_indices("train").size() == 4);
    CHECK(m5.split_indices("test").size() == 1);

    CHECK_THROWS_AS(split_dataset(make_videos(1), 0), ConfigError);
    CHECK_THROWS_AS(split_dataset(make_videos(4), 0), ConfigError);
}

TEST_CASE("pgm round trip") {
    const std::string path = "/tmp/pttt_test.pgm";
    std::vector<std::uint8_t> bytes(12 * 7);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(i * 3);
    write_pgm(path, 12, 7, bytes);
    int w = 0, h = 0;
    std::vector<std::uint8_t> back;
    read_pgm(path, w, h, back);
    CHECK(w == 12);
    CHECK(h == 7);
    CHECK(back == bytes);
    fs::remove(path);
}

TEST_CASE("dataset save/load round trip") {
    const std::string dir = "/tmp/pttt_ds_test";
    fs::remove_all(dir);

    std::vector<VideoSequence> videos;
    for (int i = 0; i < 5; ++i) {
        VideoSequence v = generate_video(static_cast<std::uint64_t>(100 + i), small_scene(3, 64));
        char name[16];
        std::snprintf(name, sizeof(name), "video_%03d", i);
        v.meta.name = name;
        videos.push_back(std::move(v));
    }
    const DatasetManifest manifest = split_dataset(videos, 1);
    save_dataset(videos, manifest, dir);

    auto [loaded, loaded_manifest] = load_dataset(dir);
    REQUIRE(loaded.size() == videos.size());
    CHECK(loaded_manifest.format_version == 1);
    for (std::size_t i = 0; i < videos.size(); ++i) {
        CHECK(masks_digest(loaded[i]) == masks_digest(videos[i]));
        for (std::size_t t = 0; t < videos[i].label_maps.size(); ++t)
            CHECK(loaded[i].label_maps[t].v == videos[i].label_maps[t].v);
        // Frames reproduce exactly at 8-bit quantization.
        for (std::size_t t = 0; t < videos[i].frames.size(); ++t)
            CHECK(quantize_image(loaded[i].frames[t]) == quantize_image(videos[i].frames[t]));
    }

    // Saving the loaded dataset again is byte-stable.
    const std::string dir2 = "/tmp/pttt_ds_test2";
    fs::remove_all(dir2);
    save_dataset(loaded, loaded_manifest, dir2);
    auto [reloaded, manifest2] = load_dataset(dir2);
    for (std::size_t i = 0; i < loaded.size(); ++i)
        for (std::size_t t = 0; t < loaded[i].frames.size(); ++t)
            CHECK(reloaded[i].frames[t].v == loaded[i].frames[t].v);

    fs::remove_all(dir2);

    // Dangling path in the manifest is a format error.
    fs::remove_all(dir + "/video_002");
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("label map values above 12 are rejected on load") {
    const std::string dir = "/tmp/pttt_ds_badlabel";
    fs::remove_all(dir);
    std::vector<VideoSequence> videos;
    for (int i = 0; i < 5; ++i) {
        VideoSequence v = generate_video(static_cast<std::uint64_t>(i), small_scene(1, 64));
        v.meta.name = "video_00" + std::to_string(i);
        videos.push_back(std::move(v));
    }
    save_dataset(videos, split_dataset(videos, 0), dir);

    // Corrupt one label file with an out-of-range code.
    const std::string labels = dir + "/video_000/frame_000_labels.pgm";
    int w = 0, h = 0;
    std::vector<std::uint8_t> bytes;
    read_pgm(labels, w, h, bytes);
    bytes[10] = 13;
    write_pgm(labels, w, h, bytes);
    CHECK_THROWS_AS(load_dataset(dir), ValidationError);
    fs::remove_all(dir);
}
