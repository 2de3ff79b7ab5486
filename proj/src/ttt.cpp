#include "pttt/ttt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "pttt/kernels.hpp"
#include "pttt/parallel.hpp"

namespace pttt {

void TTTConfig::validate() const {
    if (learning_rate < 0.0) throw ConfigError("ttt learning_rate must be >= 0");
    if (steps_per_frame < 0) throw ConfigError("steps_per_frame must be >= 0");
    if (loops < 1) throw ConfigError("K (loops) must be >= 1");
    if (n_points < 1) throw ConfigError("n_points must be >= 1");
    if (!(gamma_min >= 0.5 && gamma_max <= 2.0 && gamma_min <= gamma_max))
        throw ConfigError("gamma range must lie within [0.5, 2.0]");
    if (!(brightness_range >= 0.0 && brightness_range <= 0.2))
        throw ConfigError("brightness_range must lie within [0, 0.2]");
    if (!(noise_sigma_max >= 0.0 && noise_sigma_max <= 0.1))
        throw ConfigError("noise_sigma_max must lie within [0, 0.1]");
    if (!(mae_mask_ratio >= 0.0 && mae_mask_ratio <= 1.0))
        throw ConfigError("mae_mask_ratio must be in [0,1]");
    if (!(lr_drop_factor > 0.0 && lr_drop_factor < 1.0))
        throw ConfigError("lr_drop_factor must be in (0,1)");
    if (saturation_patience < 1) throw ConfigError("saturation_patience must be >= 1");
    if (saturation_tolerance < 0.0) throw ConfigError("saturation_tolerance must be >= 0");
}

std::vector<PointPrompt> sample_point_prompts(const BinaryMask& mask, int n, std::uint64_t seed) {
    if (n < 1) throw ValidationError("must sample at least one point prompt");
    const std::size_t fg = mask.count();
    if (fg < static_cast<std::size_t>(n))
        throw ValidationError("mask has " + std::to_string(fg) + " foreground pixels, need " +
                              std::to_string(n) + " distinct prompts");

    // Flat indices of foreground pixels in scan order.
    std::vector<std::size_t> fg_idx;
    fg_idx.reserve(fg);
    for (std::size_t i = 0; i < mask.v.size(); ++i)
        if (mask.v[i]) fg_idx.push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> chosen;
    chosen.reserve(static_cast<std::size_t>(n));
    while (chosen.size() < static_cast<std::size_t>(n)) {
        const std::size_t pick = fg_idx[rng.index(fg_idx.size())];
        if (std::find(chosen.begin(), chosen.end(), pick) == chosen.end()) chosen.push_back(pick);
    }

    std::vector<PointPrompt> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen)
        out.push_back(PointPrompt{static_cast<double>(i % static_cast<std::size_t>(mask.w)),
                                  static_cast<double>(i / static_cast<std::size_t>(mask.w)), 1});
    return out;
}

AugmentationSpec sample_augmentation(const TTTConfig& config, Rng& rng) {
    AugmentationSpec spec;
    spec.rotation_quarters = rng.int_range(0, 3);
    spec.horizontal_flip = rng.bernoulli(0.5);
    spec.vertical_flip = rng.bernoulli(0.5);
    spec.gamma = rng.uniform(config.gamma_min, config.gamma_max);
    spec.brightness_shift = rng.uniform(-config.brightness_range, config.brightness_range);
    spec.noise_sigma = rng.uniform(0.0, config.noise_sigma_max);
    spec.seed = rng.next_u64();
    return spec;
}

namespace {

struct BranchState {
    Image view;
    std::vector<PointPrompt> points;
    EncoderCache enc;
    DecoderCache dec;
    MaskProb aligned;  // prediction mapped back to the original frame
};

void encoder_only_update(ModelParams& params, OptimizerState& opt, const ParamSet& grads) {
    adam_apply(params, opt, grads, {"encoder"});
}

}  // namespace

LossValue ttt_consistency_step_views(const Image& image, const std::vector<PointPrompt>& points1,
                                     const std::vector<PointPrompt>& points2,
                                     const AugmentationSpec& spec1, const AugmentationSpec& spec2,
                                     ModelParams& params, OptimizerState& opt,
                                     const TTTConfig& config) {
    config.validate();
    const AugmentationSpec* specs[2] = {&spec1, &spec2};
    const std::vector<PointPrompt>* pts[2] = {&points1, &points2};
    BranchState branches[2];

    parallel_for(2, [&](std::size_t b) {
        auto [view, tp] = apply_augmentation(image, *pts[b], *specs[b]);
        branches[b].view = std::move(view);
        branches[b].points = std::move(tp);
        const FeatureMap feat = encode_image(branches[b].view, params, &branches[b].enc);
        const auto prompt =
            encode_prompt(branches[b].points, params, branches[b].view.h, branches[b].view.w);
        const MaskProb pred =
            decoder_forward(feat, prompt, params, "daux", &branches[b].dec);
        branches[b].aligned = invert_geometric(pred, *specs[b]);
    });

    const LossValue loss = consistency_loss(branches[0].aligned, branches[1].aligned);
    if (!std::isfinite(loss.value)) throw NumericError("non-finite consistency loss");

    Grid2 d0(image.h, image.w), d1(image.h, image.w);
    consistency_loss_backward(branches[0].aligned, branches[1].aligned, 1.0, d0, d1);
    Grid2* daligned[2] = {&d0, &d1};

    ParamSet grads[2] = {ParamSet::zeros_like(params.set), ParamSet::zeros_like(params.set)};
    parallel_for(2, [&](std::size_t b) {
        // Adjoint of the alignment permutation, then back through the decoder
        // (frozen: no parameter grads) into the encoder.
        const Grid2 dpred = apply_geometric(*daligned[b], *specs[b]);
        const Volume dfeat =
            decoder_backward(dpred, branches[b].dec, params, "daux", nullptr, false);
        encoder_backward(dfeat, branches[b].enc, params, grads[b]);
    });

    auto& g0 = grads[0].arrays();
    const auto& g1 = grads[1].arrays();
    for (std::size_t a = 0; a < g0.size(); ++a)
        kernels::active().axpy(1.0, g1[a].data.data(), g0[a].data.data(), g0[a].data.size());

    encoder_only_update(params, opt, grads[0]);
    saturation_update(loss.value, opt, config.saturation_tolerance, config.saturation_patience,
                      config.lr_drop_factor);
    return loss;
}

LossValue ttt_consistency_step(const Image& image, const BinaryMask& prompt_source_mask,
                               ModelParams& params, OptimizerState& opt, const TTTConfig& config,
                               std::uint64_t step_seed) {
    if (prompt_source_mask.empty_mask())
        throw ValidationError("prompt source mask is empty; cannot sample point prompts");
    Rng rng(seed_mix({config.seed, 0x74747473ULL, step_seed}));
    const AugmentationSpec spec1 = sample_augmentation(config, rng);
    const AugmentationSpec spec2 = sample_augmentation(config, rng);
    const std::uint64_t pts_seed1 = rng.next_u64();
    const std::uint64_t pts_seed2 = rng.next_u64();
    const auto points1 = sample_point_prompts(prompt_source_mask, config.n_points, pts_seed1);
    const auto points2 = sample_point_prompts(prompt_source_mask, config.n_points, pts_seed2);
    return ttt_consistency_step_views(image, points1, points2, spec1, spec2, params, opt, config);
}

LossValue rotation_ttt_step(const Image& image, ModelParams& params, OptimizerState& opt,
                            const TTTConfig& config, std::uint64_t step_seed) {
    config.validate();
    Rng rng(seed_mix({config.seed, 0x726f7473ULL, step_seed}));
    const int label = rng.int_range(0, 3);
    const Image rotated = rotate90_cw(image, label);

    RotationCache cache;
    const double value = rotation_forward(rotated, label, params, &cache);
    if (!std::isfinite(value)) throw NumericError("non-finite rotation loss");

    ParamSet grads = ParamSet::zeros_like(params.set);
    rotation_backward(cache, params, grads, false);  // head frozen at test time
    encoder_only_update(params, opt, grads);
    saturation_update(value, opt, config.saturation_tolerance, config.saturation_patience,
                      config.lr_drop_factor);
    LossValue out;
    out.value = value;
    out.components["rotation"] = value;
    return out;
}

LossValue mae_ttt_step(const Image& image, ModelParams& params, OptimizerState& opt,
                       const TTTConfig& config, std::uint64_t step_seed) {
    config.validate();
    Rng rng(seed_mix({config.seed, 0x6d616573ULL, step_seed}));
    const int patch = params.arch.downsample();
    const int gh = image.h / patch, gw = image.w / patch;
    std::vector<int> cells(static_cast<std::size_t>(gh) * gw);
    std::iota(cells.begin(), cells.end(), 0);
    rng.shuffle(cells);
    const std::size_t n_masked =
        static_cast<std::size_t>(config.mae_mask_ratio * static_cast<double>(cells.size()));

    Image masked = image;
    std::vector<std::uint8_t> flags(image.v.size(), 0);
    for (std::size_t i = 0; i < n_masked; ++i) {
        const int cy = (cells[i] / gw) * patch, cx = (cells[i] % gw) * patch;
        for (int y = cy; y < cy + patch; ++y)
            for (int x = cx; x < cx + patch; ++x) {
                masked.at(y, x) = 0.0;
                flags[static_cast<std::size_t>(y) * image.w + x] = 1;
            }
    }

    ReconstructionCache cache;
    const double value = reconstruction_forward(masked, image, flags, params, &cache);
    if (!std::isfinite(value)) throw NumericError("non-finite reconstruction loss");

    ParamSet grads = ParamSet::zeros_like(params.set);
    reconstruction_backward(cache, params, grads, false);  // head frozen at test time
    encoder_only_update(params, opt, grads);
    saturation_update(value, opt, config.saturation_tolerance, config.saturation_patience,
                      config.lr_drop_factor);
    LossValue out;
    out.value = value;
    out.components["reconstruction"] = value;
    return out;
}

// ---------------------------------------------------------------------------
// Video adaptation
// ---------------------------------------------------------------------------

double TTTTrace::loop_mean_loss(int loop) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.loop == loop) {
            sum += r.loss;
            ++n;
        }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

void TTTTrace::write_csv(std::ostream& os) const {
    os << "loop,frame,step,loss\n";
    for (const auto& r : rows)
        os << r.loop << "," << r.frame << "," << r.step << "," << r.loss << "\n";
}

TTTMode ttt_mode_from_string(const std::string& s) {
    if (s == "none") return TTTMode::none;
    if (s == "prompt_ttt") return TTTMode::prompt;
    if (s == "rot_ttt") return TTTMode::rotation;
    if (s == "mae_ttt") return TTTMode::reconstruction;
    throw ConfigError("unknown TTT mode '" + s + "' (none|prompt_ttt|rot_ttt|mae_ttt)");
}

std::string ttt_mode_name(TTTMode mode) {
    switch (mode) {
        case TTTMode::none: return "none";
        case TTTMode::prompt: return "prompt_ttt";
        case TTTMode::rotation: return "rot_ttt";
        case TTTMode::reconstruction: return "mae_ttt";
    }
    return "unknown";
}

void adapt_video_resume(const VideoSequence& video, const std::vector<BinaryMask>* prompt_masks,
                        ModelParams& params, OptimizerState& opt, const TTTConfig& config,
                        TTTMode mode, int loop_begin, int loop_end, TTTTrace& trace) {
    config.validate();
    const int frames = video.frame_count();
    if (frames < 1) throw ValidationError("video must have at least one frame");
    if (mode == TTTMode::prompt) {
        if (!prompt_masks || static_cast<int>(prompt_masks->size()) != frames)
            throw ValidationError("prompt mask count does not match frame count");
    }
    if (trace.encoder_digests.empty())
        trace.encoder_digests.push_back(param_digest(params, "encoder"));

    for (int loop = loop_begin; loop < loop_end; ++loop) {
        for (int t = 0; t < frames; ++t) {
            const Image& frame = video.frames[static_cast<std::size_t>(t)];
            for (int s = 0; s < config.steps_per_frame; ++s) {
                const std::uint64_t step_seed =
                    seed_mix({static_cast<std::uint64_t>(loop), static_cast<std::uint64_t>(t),
                              static_cast<std::uint64_t>(s)});
                LossValue loss;
                switch (mode) {
                    case TTTMode::prompt:
                        loss = ttt_consistency_step(frame, (*prompt_masks)[static_cast<std::size_t>(t)],
                                                    params, opt, config, step_seed);
                        break;
                    case TTTMode::rotation:
                        loss = rotation_ttt_step(frame, params, opt, config, step_seed);
                        break;
                    case TTTMode::reconstruction:
                        loss = mae_ttt_step(frame, params, opt, config, step_seed);
                        break;
                    case TTTMode::none:
                        return;
                }
                trace.rows.push_back(TTTTraceRow{loop, t, s, loss.value});
            }
        }
        trace.encoder_digests.push_back(param_digest(params, "encoder"));
    }
}

std::pair<ModelParams, TTTTrace> adapt_video(const VideoSequence& video,
                                             const std::vector<BinaryMask>* prompt_masks,
                                             const ModelParams& initial, const TTTConfig& config,
                                             TTTMode mode) {
    ModelParams params = initial;
    TTTTrace trace;
    if (mode == TTTMode::none) {
        trace.encoder_digests.push_back(param_digest(params, "encoder"));
        return {std::move(params), std::move(trace)};
    }
    OptimizerState opt = OptimizerState::init(params.set, config.learning_rate);
    adapt_video_resume(video, prompt_masks, params, opt, config, mode, 0, config.loops, trace);
    return {std::move(params), std::move(trace)};
}

std::pair<ModelParams, TTTTrace> ttt_video(const VideoSequence& video,
                                           const std::vector<BinaryMask>& prompt_masks,
                                           const ModelParams& params, const TTTConfig& config) {
    return adapt_video(video, &prompt_masks, params, config, TTTMode::prompt);
}

MaskProb infer_after_ttt(const Image& frame, const BoxPrompt& box, const ModelParams& params) {
    return forward_main(frame, box, params);
}

}  // namespace pttt
