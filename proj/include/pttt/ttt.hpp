#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pttt/augment.hpp"
#include "pttt/model.hpp"
#include "pttt/synthdata.hpp"
#include "pttt/trainer.hpp"

namespace pttt {

struct TTTConfig {
    double learning_rate = 6e-5;
    int steps_per_frame = 5;
    int loops = 3;      // K passes over the video, weights carried across loops
    int n_points = 1;   // point prompts per augmented view
    std::uint64_t seed = 0;

    // Augmentation sampling ranges.
    double gamma_min = 0.5, gamma_max = 2.0;
    double brightness_range = 0.2;
    double noise_sigma_max = 0.1;
    double mae_mask_ratio = 0.5;

    // Saturation schedule, patience measured in steps at test time.
    double lr_drop_factor = 0.8;
    int saturation_patience = 20;
    double saturation_tolerance = 1e-3;

    void validate() const;
};

// n distinct uniform-random foreground pixel centers.
std::vector<PointPrompt> sample_point_prompts(const BinaryMask& mask, int n, std::uint64_t seed);

AugmentationSpec sample_augmentation(const TTTConfig& config, Rng& rng);

// One consistency step with explicit views (the sampled-view step and the
// degenerate-identity tests both route through this). Updates encoder
// parameters only; returns the pre-update loss.
LossValue ttt_consistency_step_views(const Image& image, const std::vector<PointPrompt>& points1,
                                     const std::vector<PointPrompt>& points2,
                                     const AugmentationSpec& spec1, const AugmentationSpec& spec2,
                                     ModelParams& params, OptimizerState& opt,
                                     const TTTConfig& config);

// Samples two augmented views and two point-prompt sets from the mask, then
// performs one encoder-only Adam step on the consistency loss.
LossValue ttt_consistency_step(const Image& image, const BinaryMask& prompt_source_mask,
                               ModelParams& params, OptimizerState& opt, const TTTConfig& config,
                               std::uint64_t step_seed);

// Baseline self-supervised steps under the same budget/optimizer contract.
LossValue rotation_ttt_step(const Image& image, ModelParams& params, OptimizerState& opt,
                            const TTTConfig& config, std::uint64_t step_seed);
LossValue mae_ttt_step(const Image& image, ModelParams& params, OptimizerState& opt,
                       const TTTConfig& config, std::uint64_t step_seed);

struct TTTTraceRow {
    int loop = 0, frame = 0, step = 0;
    double loss = 0.0;
};

struct TTTTrace {
    std::vector<TTTTraceRow> rows;
    std::vector<std::string> encoder_digests;  // before adaptation + after each loop

    double loop_mean_loss(int loop) const;
    void write_csv(std::ostream& os) const;
};

enum class TTTMode { none, prompt, rotation, reconstruction };

TTTMode ttt_mode_from_string(const std::string& s);  // none|prompt_ttt|rot_ttt|mae_ttt
std::string ttt_mode_name(TTTMode mode);

// K sequential loops over the frames with loop-carried encoder weights and
// frozen decoders. prompt_masks (one per frame, the adaptation target
// instance) are required for TTTMode::prompt and ignored otherwise.
std::pair<ModelParams, TTTTrace> adapt_video(const VideoSequence& video,
                                             const std::vector<BinaryMask>* prompt_masks,
                                             const ModelParams& initial, const TTTConfig& config,
                                             TTTMode mode);

// Resumable core: continues from existing optimizer state with an absolute
// loop offset, so running loops [0,K) equals [0,1) followed by [1,K).
void adapt_video_resume(const VideoSequence& video, const std::vector<BinaryMask>* prompt_masks,
                        ModelParams& params, OptimizerState& opt, const TTTConfig& config,
                        TTTMode mode, int loop_begin, int loop_end, TTTTrace& trace);

// Prompt-guided adaptation (the default mode).
std::pair<ModelParams, TTTTrace> ttt_video(const VideoSequence& video,
                                           const std::vector<BinaryMask>& prompt_masks,
                                           const ModelParams& params, const TTTConfig& config);

// Box-prompted inference with the adapted encoder and original frozen D_seg.
MaskProb infer_after_ttt(const Image& frame, const BoxPrompt& box, const ModelParams& params);

}  // namespace pttt
