#pragma once

#include <map>
#include <string>

#include "pttt/tensor.hpp"

namespace pttt {

struct LossValue {
    double value = 0.0;
    std::map<std::string, double> components;
};

// Soft Dice: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), eps = 1e-5.
LossValue dice_loss(const MaskProb& pred, const BinaryMask& gt);

// Pixel-mean binary cross-entropy; probabilities clamped to [1e-7, 1-1e-7].
LossValue bce_loss(const MaskProb& pred, const BinaryMask& gt);

// Dice + BCE with both components recorded.
LossValue main_task_loss(const MaskProb& pred_box, const BinaryMask& gt);

// BCE on the point-prompted mask.
LossValue aux_task_loss(const MaskProb& pred_point, const BinaryMask& gt);

// main + lambda * aux.
LossValue train_loss(const LossValue& main, const LossValue& aux, double lambda);

// Pixel-mean squared difference of two probability maps.
LossValue consistency_loss(const MaskProb& m1, const MaskProb& m2);

// Analytic gradients, accumulated into dpred with the given weight.
void dice_loss_backward(const MaskProb& pred, const BinaryMask& gt, double weight,
                        Grid2& dpred);
void bce_loss_backward(const MaskProb& pred, const BinaryMask& gt, double weight,
                       Grid2& dpred);
void consistency_loss_backward(const MaskProb& m1, const MaskProb& m2, double weight,
                               Grid2& dm1, Grid2& dm2);

namespace loss_constants {
inline constexpr double dice_eps = 1e-5;
inline constexpr double bce_clamp = 1e-7;
}  // namespace loss_constants

}  // namespace pttt
