#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pttt/losses.hpp"
#include "pttt/model.hpp"
#include "pttt/rng.hpp"
#include "pttt/synthdata.hpp"
#include "pttt/tensor.hpp"

namespace pttt {

struct TrainConfig {
    double lambda = 0.2;           // auxiliary loss weight
    double learning_rate = 1e-3;
    int batch_size = 2;
    int epochs = 20;
    std::uint64_t seed = 0;
    double lr_drop_factor = 0.8;
    int saturation_patience = 20;      // epochs without relative improvement
    double saturation_tolerance = 1e-3;
    bool train_baseline_heads = true;  // rotation/reconstruction heads join Eq-1 training
    double head_loss_weight = 0.1;
    double box_jitter_frac = 0.05;     // box corners jittered by <= 5% of side length
    double crop_scale_min = 0.8;
    double flip_prob = 0.5;
    double mae_mask_ratio = 0.5;

    void validate() const;
};

// Adam with per-array moment buffers; also carries the saturation-scheduler
// counters so the same state serves training (per epoch) and test-time
// adaptation (per step).
struct OptimizerState {
    ParamSet m, v;
    long step = 0;
    double lr = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double best_loss = std::numeric_limits<double>::infinity();
    int patience = 0;

    static OptimizerState init(const ParamSet& params, double lr);
};

// One training sample: the (possibly augmented) frame, the target instance's
// mask, prompts derived from it, and optional baseline-head tasks prepared by
// the batch assembler so the loss stays a pure function of the parameters.
struct TrainSample {
    Image image;
    BinaryMask gt;
    BoxPrompt box;
    PointPrompt point;

    int rot_label = -1;  // < 0: no rotation task
    Image rotated;
    bool has_mae = false;
    Image masked_image;
    std::vector<std::uint8_t> masked_pixels;

    // diagnostics
    int video_index = -1, frame_index = -1, anatomy_code = -1;
};

struct TrainHistory {
    std::vector<double> train, main, aux, rot, recon;
    std::vector<double> lr;
    std::vector<int> drop_epochs;
};

// Batch-mean losses and, when grads != nullptr, parameter gradients of the
// optimization objective train + head_weight*(rot+recon). The returned value
// is the batch-mean L_train = L_main + lambda * L_aux.
LossValue train_loss_and_grads(const std::vector<TrainSample>& batch, const ModelParams& params,
                               const TrainConfig& config, ParamSet* grads);

// One joint Adam update over encoder, prompt encoder and both decoders (plus
// baseline heads when enabled). Throws NumericError on a non-finite loss,
// naming the offending sample.
LossValue train_step(const std::vector<TrainSample>& batch, ModelParams& params,
                     OptimizerState& opt, const TrainConfig& config);

// Applies one Adam step to the named components only.
void adam_apply(ModelParams& params, OptimizerState& opt, const ParamSet& grads,
                const std::vector<std::string>& components);

// Saturation rule: if the best epoch loss has not improved by more than
// saturation_tolerance (relative) for saturation_patience consecutive calls,
// multiply the learning rate by lr_drop_factor and reset the counter.
// Returns true when a drop happened.
bool update_lr_on_saturation(const TrainHistory& history, OptimizerState& opt,
                             const TrainConfig& config);
bool update_lr_on_saturation(double latest_loss, OptimizerState& opt, const TrainConfig& config);

// Core saturation rule, shared with the per-step schedule of the TTT engine.
bool saturation_update(double latest_loss, OptimizerState& opt, double tolerance, int patience,
                       double drop_factor);

// Source training over the train-split videos.
std::pair<ModelParams, TrainHistory> fit(const std::vector<VideoSequence>& videos,
                                         const TrainConfig& config, const ArchConfig& arch);

struct ParamCoord {
    std::string array;
    std::size_t index = 0;
};

// Central differences (f(p+eps) - f(p-eps)) / (2 eps) per coordinate.
std::vector<double> finite_difference_gradient(
    const std::function<double(const ModelParams&)>& loss_evaluator, const ModelParams& params,
    const std::vector<ParamCoord>& coords, double epsilon);

// Deterministic sample assembly shared by fit and the evaluation harness.
TrainSample make_train_sample(const VideoSequence& video, int frame, int anatomy_code,
                              std::uint64_t sample_seed, const TrainConfig& config,
                              bool augment);

// Uniform interior pixel of a non-empty mask (shared with the TTT engine).
PointPrompt sample_interior_point(const BinaryMask& mask, Rng& rng);
BoxPrompt mask_bounding_box(const BinaryMask& mask);

}  // namespace pttt
