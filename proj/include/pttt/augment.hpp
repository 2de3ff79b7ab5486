#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pttt/tensor.hpp"

namespace pttt {

// Invertible view transform for consistency training. The geometric part is
// restricted to right-angle rotations and axis flips so masks can be mapped
// back to the original frame exactly on the pixel grid; photometric changes
// apply to the image only.
struct AugmentationSpec {
    int rotation_quarters = 0;      // clockwise, 0..3
    bool horizontal_flip = false;
    bool vertical_flip = false;
    double gamma = 1.0;             // [0.5, 2.0]
    double brightness_shift = 0.0;  // [-0.2, 0.2]
    double noise_sigma = 0.0;       // [0, 0.1]
    std::uint64_t seed = 0;         // noise draw

    bool is_geometric_identity() const {
        return rotation_quarters == 0 && !horizontal_flip && !vertical_flip;
    }
};

// Geometric order: rotate, then horizontal flip, then vertical flip.
// Photometric order: gamma, brightness, Gaussian noise, clamp to [0,1].
std::pair<Image, std::vector<PointPrompt>> apply_augmentation(
    const Image& image, const std::vector<PointPrompt>& points, const AugmentationSpec& spec);

// Exact inverse of the spec's geometric part on a probability map.
MaskProb invert_geometric(const MaskProb& mask, const AugmentationSpec& spec);

// Forward geometric part only (also the adjoint of invert_geometric, used to
// route gradients back through the inversion).
Grid2 apply_geometric(const Grid2& g, const AugmentationSpec& spec);

// Maps a point through the spec's geometric part (used for prompts).
PointPrompt transform_point(const PointPrompt& p, const AugmentationSpec& spec, int h, int w);

// Shared grid transforms.
Grid2 rotate90_cw(const Grid2& g, int quarters);
Grid2 flip_horizontal(const Grid2& g);
Grid2 flip_vertical(const Grid2& g);

// Train-time augmentation: crop a window and resize back to the original
// resolution (bilinear for images, nearest for masks), optional mirror.
Image crop_resize_image(const Image& img, int y0, int x0, int ch, int cw, int out_h, int out_w);
BinaryMask crop_resize_mask(const BinaryMask& m, int y0, int x0, int ch, int cw, int out_h,
                            int out_w);
Image mirror_image(const Image& img);
BinaryMask mirror_mask(const BinaryMask& m);

}  // namespace pttt
