#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pttt/tensor.hpp"

namespace pttt {

// Label codes 1..12; 0 is background.
struct AnatomyInfo {
    int code;
    const char* name;
};

const std::array<AnatomyInfo, 12>& anatomy_catalog();
const char* anatomy_name(int code);

// Codes from highest to lowest precedence when flattening overlapping masks
// into the single-channel label map: bolus > epiglottis > pharynx > trachea >
// mandible > C1..C7.
const std::vector<int>& label_precedence();

// Photometric source->target shift; masks are never touched.
struct ShiftSpec {
    double gamma = 1.0;
    double noise_sigma = 0.0;
    double brightness = 0.0;
    double contrast = 1.0;
    std::uint64_t seed = 0;

    bool is_identity() const {
        return gamma == 1.0 && noise_sigma == 0.0 && brightness == 0.0 && contrast == 1.0;
    }
};

struct SceneConfig {
    int frames = 24;
    int width = 256;
    int height = 256;
    int resolution_divisor = 16;  // encoder downsample factor the data must match
    double max_bolus_step = 10.0;  // px per frame, temporal-coherence bound
};

struct LabelMap {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;  // values 0..12
};

struct VideoMeta {
    std::string name;
    std::uint64_t seed = 0;
    SceneConfig scene;
    bool shifted = false;
    ShiftSpec shift;
};

struct VideoSequence {
    std::vector<Image> frames;
    std::vector<std::vector<BinaryMask>> masks;  // [frame][anatomy code - 1]
    std::vector<LabelMap> label_maps;
    VideoMeta meta;

    int frame_count() const { return static_cast<int>(frames.size()); }
    const BinaryMask& mask_of(int frame, int code) const {
        return masks[static_cast<std::size_t>(frame)][static_cast<std::size_t>(code - 1)];
    }
};

// Deterministic scene: static cervical spine (C1..C7), mandible wedge,
// trachea band and curved pharynx channel; an oscillating epiglottis flap and
// a bolus that deforms while travelling along the pharynx centerline.
VideoSequence generate_video(std::uint64_t seed, const SceneConfig& config);

// Recomputes the label map from per-anatomy masks using label_precedence().
LabelMap flatten_masks(const std::vector<BinaryMask>& anatomy_masks);

VideoSequence apply_domain_shift(const VideoSequence& video, const ShiftSpec& spec);

struct ManifestEntry {
    std::string name;
    int frames = 0, width = 0, height = 0;
    std::string split;  // "train" | "test"
    std::uint64_t seed = 0;
    bool shifted = false;
    ShiftSpec shift;
};

struct DatasetManifest {
    int format_version = 1;
    std::vector<ManifestEntry> entries;

    std::vector<std::size_t> split_indices(const std::string& split) const;
};

// Seeded shuffle then 8:2 assignment by whole video; the training side takes
// the rounding remainder. Throws ConfigError when either side would be empty.
DatasetManifest split_dataset(const std::vector<VideoSequence>& videos, std::uint64_t seed);

// On-disk layout: <dir>/manifest.json plus one directory per video holding
// meta.json, frame_###.pgm, frame_###_labels.pgm and frame_###_mask_CC.pgm.
void save_dataset(const std::vector<VideoSequence>& videos, const DatasetManifest& manifest,
                  const std::string& directory);
std::pair<std::vector<VideoSequence>, DatasetManifest> load_dataset(const std::string& directory);

// 8-bit binary PGM (P5).
void write_pgm(const std::string& path, int w, int h, const std::vector<std::uint8_t>& bytes);
void read_pgm(const std::string& path, int& w, int& h, std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> quantize_image(const Image& img);
Image dequantize_image(int h, int w, const std::vector<std::uint8_t>& bytes);

}  // namespace pttt
