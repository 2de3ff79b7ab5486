#include "pttt/losses.hpp"

#include <cmath>

#include "pttt/common.hpp"
#include "pttt/kernels.hpp"

namespace pttt {

namespace {
void check_dims(int ph, int pw, int gh, int gw, const char* what) {
    if (ph != gh || pw != gw)
        throw ShapeError(std::string(what) + ": dims mismatch (" + std::to_string(pw) + "x" +
                         std::to_string(ph) + " vs " + std::to_string(gw) + "x" +
                         std::to_string(gh) + ")");
}
}  // namespace

LossValue dice_loss(const MaskProb& pred, const BinaryMask& gt) {
    check_dims(pred.h, pred.w, gt.h, gt.w, "dice_loss");
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        psum += pred.v[i];
        if (gt.v[i]) {
            inter += pred.v[i];
            gsum += 1.0;
        }
    }
    const double eps = loss_constants::dice_eps;
    const double value = 1.0 - (2.0 * inter + eps) / (psum + gsum + eps);
    LossValue out;
    out.value = value;
    out.components["dice"] = value;
    return out;
}

void dice_loss_backward(const MaskProb& pred, const BinaryMask& gt, double weight, Grid2& dpred) {
    check_dims(pred.h, pred.w, gt.h, gt.w, "dice_loss_backward");
    check_dims(pred.h, pred.w, dpred.h, dpred.w, "dice_loss_backward grad");
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        psum += pred.v[i];
        if (gt.v[i]) {
            inter += pred.v[i];
            gsum += 1.0;
        }
    }
    const double eps = loss_constants::dice_eps;
    const double denom = psum + gsum + eps;
    const double num = 2.0 * inter + eps;
    // d/dp_i [1 - num/denom] = (num - 2*g_i*denom) / denom^2
    const double inv_d2 = 1.0 / (denom * denom);
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double g = gt.v[i] ? 1.0 : 0.0;
        dpred.v[i] += weight * (num - 2.0 * g * denom) * inv_d2;
    }
}

LossValue bce_loss(const MaskProb& pred, const BinaryMask& gt) {
    check_dims(pred.h, pred.w, gt.h, gt.w, "bce_loss");
    const double lo = loss_constants::bce_clamp;
    const double hi = 1.0 - lo;
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        double p = pred.v[i];
        p = p < lo ? lo : (p > hi ? hi : p);
        acc -= gt.v[i] ? std::log(p) : std::log(1.0 - p);
    }
    LossValue out;
    out.value = acc / static_cast<double>(pred.v.size());
    out.components["bce"] = out.value;
    return out;
}

void bce_loss_backward(const MaskProb& pred, const BinaryMask& gt, double weight, Grid2& dpred) {
    check_dims(pred.h, pred.w, gt.h, gt.w, "bce_loss_backward");
    check_dims(pred.h, pred.w, dpred.h, dpred.w, "bce_loss_backward grad");
    const double lo = loss_constants::bce_clamp;
    const double hi = 1.0 - lo;
    const double scale = weight / static_cast<double>(pred.v.size());
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double p = pred.v[i];
        if (p < lo || p > hi) continue;  // clamp region: zero slope
        dpred.v[i] += gt.v[i] ? scale * (-1.0 / p) : scale * (1.0 / (1.0 - p));
    }
}

LossValue main_task_loss(const MaskProb& pred_box, const BinaryMask& gt) {
    const LossValue d = dice_loss(pred_box, gt);
    const LossValue b = bce_loss(pred_box, gt);
    LossValue out;
    out.value = d.value + b.value;
    out.components["dice"] = d.value;
    out.components["bce"] = b.value;
    return out;
}

LossValue aux_task_loss(const MaskProb& pred_point, const BinaryMask& gt) {
    return bce_loss(pred_point, gt);
}

LossValue train_loss(const LossValue& main, const LossValue& aux, double lambda) {
    if (lambda < 0.0) throw ValidationError("loss weight lambda must be >= 0");
    LossValue out;
    out.value = main.value + lambda * aux.value;
    out.components["main"] = main.value;
    out.components["aux"] = aux.value;
    out.components["lambda"] = lambda;
    return out;
}

LossValue consistency_loss(const MaskProb& m1, const MaskProb& m2) {
    check_dims(m1.h, m1.w, m2.h, m2.w, "consistency_loss");
    const double sse = kernels::active().sumsq_diff(m1.v.data(), m2.v.data(), m1.v.size());
    LossValue out;
    out.value = sse / static_cast<double>(m1.v.size());
    out.components["consistency"] = out.value;
    return out;
}

void consistency_loss_backward(const MaskProb& m1, const MaskProb& m2, double weight,
                               Grid2& dm1, Grid2& dm2) {
    check_dims(m1.h, m1.w, m2.h, m2.w, "consistency_loss_backward");
    const double scale = 2.0 * weight / static_cast<double>(m1.v.size());
    for (std::size_t i = 0; i < m1.v.size(); ++i) {
        const double diff = scale * (m1.v[i] - m2.v[i]);
        dm1.v[i] += diff;
        dm2.v[i] -= diff;
    }
}

}  // namespace pttt
