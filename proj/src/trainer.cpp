#include "pttt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pttt/augment.hpp"
#include "pttt/kernels.hpp"
#include "pttt/parallel.hpp"

namespace pttt {

void TrainConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(lr_drop_factor > 0.0 && lr_drop_factor < 1.0))
        throw ConfigError("lr_drop_factor must be in (0,1)");
    if (saturation_patience < 1) throw ConfigError("saturation_patience must be >= 1");
    if (saturation_tolerance < 0.0) throw ConfigError("saturation_tolerance must be >= 0");
    if (head_loss_weight < 0.0) throw ConfigError("head_loss_weight must be >= 0");
    if (!(box_jitter_frac >= 0.0 && box_jitter_frac < 0.5))
        throw ConfigError("box_jitter_frac must be in [0, 0.5)");
    if (!(crop_scale_min > 0.0 && crop_scale_min <= 1.0))
        throw ConfigError("crop_scale_min must be in (0,1]");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must be in [0,1]");
    if (!(mae_mask_ratio >= 0.0 && mae_mask_ratio <= 1.0))
        throw ConfigError("mae_mask_ratio must be in [0,1]");
}

OptimizerState OptimizerState::init(const ParamSet& params, double lr) {
    OptimizerState s;
    s.m = ParamSet::zeros_like(params);
    s.v = ParamSet::zeros_like(params);
    s.lr = lr;
    return s;
}

// ---------------------------------------------------------------------------
// Prompt derivation
// ---------------------------------------------------------------------------

BoxPrompt mask_bounding_box(const BinaryMask& mask) {
    int x0 = mask.w, y0 = mask.h, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw ValidationError("bounding box of an empty mask");
    // A bounding box needs positive extent; widen degenerate axes by half a
    // pixel on each side (still inside the image after the caller's clamp).
    BoxPrompt b;
    b.x_min = x0 == x1 ? std::max(0.0, x0 - 0.5) : x0;
    b.x_max = x0 == x1 ? std::min(mask.w - 1.0, x1 + 0.5) : x1;
    b.y_min = y0 == y1 ? std::max(0.0, y0 - 0.5) : y0;
    b.y_max = y0 == y1 ? std::min(mask.h - 1.0, y1 + 0.5) : y1;
    return b;
}

PointPrompt sample_interior_point(const BinaryMask& mask, Rng& rng) {
    const std::size_t n = mask.count();
    if (n == 0) throw ValidationError("cannot sample a point from an empty mask");
    std::size_t target = rng.index(n);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) {
                if (target == 0) return PointPrompt{static_cast<double>(x), static_cast<double>(y), 1};
                --target;
            }
    throw ValidationError("mask changed during point sampling");
}

namespace {

BoxPrompt jitter_box(const BoxPrompt& b, double frac, int h, int w, Rng& rng) {
    const double lx = b.x_max - b.x_min;
    const double ly = b.y_max - b.y_min;
    BoxPrompt out;
    out.x_min = b.x_min + rng.uniform(-frac, frac) * lx;
    out.x_max = b.x_max + rng.uniform(-frac, frac) * lx;
    out.y_min = b.y_min + rng.uniform(-frac, frac) * ly;
    out.y_max = b.y_max + rng.uniform(-frac, frac) * ly;
    out.x_min = std::clamp(out.x_min, 0.0, w - 1.0);
    out.x_max = std::clamp(out.x_max, 0.0, w - 1.0);
    out.y_min = std::clamp(out.y_min, 0.0, h - 1.0);
    out.y_max = std::clamp(out.y_max, 0.0, h - 1.0);
    if (out.x_min >= out.x_max) std::swap(out.x_min, out.x_max);
    if (out.y_min >= out.y_max) std::swap(out.y_min, out.y_max);
    if (out.x_max - out.x_min < 1e-9) out.x_max = std::min(out.x_min + 0.5, w - 1.0);
    if (out.y_max - out.y_min < 1e-9) out.y_max = std::min(out.y_min + 0.5, h - 1.0);
    return out;
}

}  // namespace

TrainSample make_train_sample(const VideoSequence& video, int frame, int anatomy_code,
                              std::uint64_t sample_seed, const TrainConfig& config,
                              bool augment) {
    Rng rng(sample_seed);
    const Image& src_img = video.frames[static_cast<std::size_t>(frame)];
    const BinaryMask& src_mask = video.mask_of(frame, anatomy_code);

    TrainSample s;
    s.video_index = -1;
    s.frame_index = frame;
    s.anatomy_code = anatomy_code;

    Image img = src_img;
    BinaryMask mask = src_mask;
    if (augment) {
        // Random crop-resize; fall back to the full frame if the target
        // instance is cropped away.
        const double scale = rng.uniform(config.crop_scale_min, 1.0);
        const int ch = std::max(2, static_cast<int>(std::lround(scale * src_img.h)));
        const int cw = std::max(2, static_cast<int>(std::lround(scale * src_img.w)));
        const int y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(src_img.h - ch + 1)));
        const int x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(src_img.w - cw + 1)));
        const bool flip = rng.bernoulli(config.flip_prob);

        BinaryMask cropped = crop_resize_mask(src_mask, y0, x0, ch, cw, src_img.h, src_img.w);
        if (!cropped.empty_mask()) {
            img = crop_resize_image(src_img, y0, x0, ch, cw, src_img.h, src_img.w);
            mask = std::move(cropped);
        }
        if (flip) {
            img = mirror_image(img);
            mask = mirror_mask(mask);
        }
    }

    s.box = jitter_box(mask_bounding_box(mask), augment ? config.box_jitter_frac : 0.0, img.h,
                       img.w, rng);
    s.point = sample_interior_point(mask, rng);
    s.image = std::move(img);
    s.gt = std::move(mask);

    if (config.train_baseline_heads) {
        s.rot_label = rng.int_range(0, 3);
        s.rotated = rotate90_cw(s.image, s.rot_label);

        s.has_mae = true;
        const int patch = 16;  // matches the default encoder downsample
        const int gh = s.image.h / patch, gw = s.image.w / patch;
        std::vector<int> cells(static_cast<std::size_t>(gh) * gw);
        std::iota(cells.begin(), cells.end(), 0);
        rng.shuffle(cells);
        const std::size_t n_masked =
            static_cast<std::size_t>(config.mae_mask_ratio * static_cast<double>(cells.size()));
        s.masked_pixels.assign(s.image.v.size(), 0);
        s.masked_image = s.image;
        for (std::size_t i = 0; i < n_masked; ++i) {
            const int cell = cells[i];
            const int cy = (cell / gw) * patch, cx = (cell % gw) * patch;
            for (int y = cy; y < cy + patch; ++y)
                for (int x = cx; x < cx + patch; ++x) {
                    s.masked_image.at(y, x) = 0.0;
                    s.masked_pixels[static_cast<std::size_t>(y) * s.image.w + x] = 1;
                }
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Loss + gradients
// ---------------------------------------------------------------------------

namespace {

struct SampleResult {
    LossValue main, aux;
    double rot = 0.0, recon = 0.0;
    ParamSet grads;
    bool has_grads = false;
};

SampleResult sample_loss_and_grads(const TrainSample& s, const ModelParams& params,
                                   const TrainConfig& config, bool want_grads, double inv_batch) {
    SampleResult r;
    if (want_grads) {
        r.grads = ParamSet::zeros_like(params.set);
        r.has_grads = true;
    }

    EncoderCache enc;
    const FeatureMap feat = encode_image(s.image, params, want_grads ? &enc : nullptr);

    const auto box_prompt = encode_prompt(s.box, params, s.image.h, s.image.w);
    DecoderCache dseg_cache;
    const MaskProb pred_box =
        decoder_forward(feat, box_prompt, params, "dseg", want_grads ? &dseg_cache : nullptr);
    r.main = main_task_loss(pred_box, s.gt);

    const auto point_prompt = encode_prompt(s.point, params, s.image.h, s.image.w);
    DecoderCache daux_cache;
    const MaskProb pred_point =
        decoder_forward(feat, point_prompt, params, "daux", want_grads ? &daux_cache : nullptr);
    r.aux = aux_task_loss(pred_point, s.gt);

    if (want_grads) {
        Grid2 dmain(pred_box.h, pred_box.w);
        dice_loss_backward(pred_box, s.gt, inv_batch, dmain);
        bce_loss_backward(pred_box, s.gt, inv_batch, dmain);
        Volume dfeat = decoder_backward(dmain, dseg_cache, params, "dseg", &r.grads, true);

        Grid2 daux_g(pred_point.h, pred_point.w);
        bce_loss_backward(pred_point, s.gt, config.lambda * inv_batch, daux_g);
        const Volume dfeat_aux =
            decoder_backward(daux_g, daux_cache, params, "daux", &r.grads, true);
        kernels::active().axpy(1.0, dfeat_aux.v.data(), dfeat.v.data(), dfeat.v.size());

        encoder_backward(dfeat, enc, params, r.grads);
    }

    if (config.train_baseline_heads && s.rot_label >= 0) {
        RotationCache rc;
        r.rot = rotation_forward(s.rotated, s.rot_label, params, want_grads ? &rc : nullptr);
        if (want_grads) rotation_backward(rc, params, r.grads, true, config.head_loss_weight * inv_batch);
    }
    if (config.train_baseline_heads && s.has_mae) {
        ReconstructionCache mc;
        r.recon = reconstruction_forward(s.masked_image, s.image, s.masked_pixels, params,
                                         want_grads ? &mc : nullptr);
        if (want_grads)
            reconstruction_backward(mc, params, r.grads, true, config.head_loss_weight * inv_batch);
    }
    return r;
}

}  // namespace

LossValue train_loss_and_grads(const std::vector<TrainSample>& batch, const ModelParams& params,
                               const TrainConfig& config, ParamSet* grads) {
    if (batch.empty()) throw ConfigError("training batch must be non-empty");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    std::vector<SampleResult> results(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        results[i] = sample_loss_and_grads(batch[i], params, config, grads != nullptr, inv_batch);
    });

    double main_sum = 0.0, aux_sum = 0.0, rot_sum = 0.0, recon_sum = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        if (!std::isfinite(r.main.value) || !std::isfinite(r.aux.value) ||
            !std::isfinite(r.rot) || !std::isfinite(r.recon)) {
            const auto& s = batch[i];
            throw NumericError("non-finite loss on sample (video " +
                               std::to_string(s.video_index) + ", frame " +
                               std::to_string(s.frame_index) + ", anatomy " +
                               std::to_string(s.anatomy_code) + ")");
        }
        main_sum += r.main.value;
        aux_sum += r.aux.value;
        rot_sum += r.rot;
        recon_sum += r.recon;
        if (grads && r.has_grads) {
            // Fixed reduction order keeps results independent of scheduling.
            auto& dst = grads->arrays();
            const auto& src = r.grads.arrays();
            for (std::size_t a = 0; a < dst.size(); ++a)
                kernels::active().axpy(1.0, src[a].data.data(), dst[a].data.data(),
                                       dst[a].data.size());
        }
    }

    LossValue main{main_sum * inv_batch, {}};
    LossValue aux{aux_sum * inv_batch, {}};
    LossValue out = train_loss(main, aux, config.lambda);
    out.components["rot"] = rot_sum * inv_batch;
    out.components["recon"] = recon_sum * inv_batch;
    out.components["objective"] =
        out.value + config.head_loss_weight * (rot_sum + recon_sum) * inv_batch;
    return out;
}

void adam_apply(ModelParams& params, OptimizerState& opt, const ParamSet& grads,
                const std::vector<std::string>& components) {
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    const auto& ops = kernels::active();
    auto in_components = [&](const std::string& name) {
        const std::string comp = component_of(name);
        return std::find(components.begin(), components.end(), comp) != components.end();
    };
    for (auto& arr : params.set.arrays()) {
        if (!in_components(arr.name)) continue;
        auto& m = opt.m.at(arr.name).data;
        auto& v = opt.v.at(arr.name).data;
        const auto& g = grads.at(arr.name).data;
        ops.adam_update(arr.data.data(), m.data(), v.data(), g.data(), g.size(), opt.lr,
                        opt.beta1, opt.beta2, opt.eps, bc1, bc2);
    }
}

LossValue train_step(const std::vector<TrainSample>& batch, ModelParams& params,
                     OptimizerState& opt, const TrainConfig& config) {
    config.validate();
    ParamSet grads = ParamSet::zeros_like(params.set);
    const LossValue loss = train_loss_and_grads(batch, params, config, &grads);

    std::vector<std::string> comps = {"encoder", "prompt_encoder", "dseg", "daux"};
    if (config.train_baseline_heads) {
        comps.push_back("rot_head");
        comps.push_back("recon_head");
    }
    adam_apply(params, opt, grads, comps);
    return loss;
}

bool saturation_update(double latest_loss, OptimizerState& opt, double tolerance, int patience,
                       double drop_factor) {
    const bool improved = latest_loss < opt.best_loss - tolerance * std::abs(opt.best_loss);
    if (improved) {
        opt.best_loss = latest_loss;
        opt.patience = 0;
        return false;
    }
    opt.patience += 1;
    if (opt.patience >= patience) {
        opt.lr *= drop_factor;
        opt.patience = 0;
        return true;
    }
    return false;
}

bool update_lr_on_saturation(double latest_loss, OptimizerState& opt, const TrainConfig& config) {
    return saturation_update(latest_loss, opt, config.saturation_tolerance,
                             config.saturation_patience, config.lr_drop_factor);
}

bool update_lr_on_saturation(const TrainHistory& history, OptimizerState& opt,
                             const TrainConfig& config) {
    if (history.train.empty()) return false;
    return update_lr_on_saturation(history.train.back(), opt, config);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

std::pair<ModelParams, TrainHistory> fit(const std::vector<VideoSequence>& videos,
                                         const TrainConfig& config, const ArchConfig& arch) {
    config.validate();
    if (videos.empty()) throw ConfigError("training set is empty");

    ModelParams params = init_params(config.seed, arch);
    OptimizerState opt = OptimizerState::init(params.set, config.learning_rate);
    TrainHistory history;

    struct FrameRef {
        int video, frame;
    };
    std::vector<FrameRef> all_frames;
    for (std::size_t vi = 0; vi < videos.size(); ++vi)
        for (int t = 0; t < videos[vi].frame_count(); ++t)
            all_frames.push_back({static_cast<int>(vi), t});
    if (all_frames.empty()) throw ConfigError("training set has no frames");

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<FrameRef> order = all_frames;
        Rng shuffle_rng(seed_mix({config.seed, 0x6f72646572ULL, static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double train_sum = 0.0, main_sum = 0.0, aux_sum = 0.0, rot_sum = 0.0, recon_sum = 0.0;
        int batches = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<TrainSample> batch;
            for (std::size_t i = start; i < end; ++i) {
                const FrameRef& fr = order[i];
                const VideoSequence& video = videos[static_cast<std::size_t>(fr.video)];
                const std::uint64_t sample_seed =
                    seed_mix({config.seed, 0x73616d70ULL, static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(i)});
                Rng pick(seed_mix({sample_seed, 0x616e6174ULL}));
                // Pick a random anatomy with a non-empty mask in this frame.
                std::vector<int> candidates;
                for (const auto& a : anatomy_catalog())
                    if (!video.mask_of(fr.frame, a.code).empty_mask()) candidates.push_back(a.code);
                if (candidates.empty()) continue;
                const int code = candidates[pick.index(candidates.size())];
                TrainSample s = make_train_sample(video, fr.frame, code, sample_seed, config, true);
                s.video_index = fr.video;
                batch.push_back(std::move(s));
            }
            if (batch.empty()) continue;
            const LossValue loss = train_step(batch, params, opt, config);
            train_sum += loss.value;
            main_sum += loss.components.at("main");
            aux_sum += loss.components.at("aux");
            rot_sum += loss.components.at("rot");
            recon_sum += loss.components.at("recon");
            ++batches;
        }

        const double inv = batches > 0 ? 1.0 / batches : 0.0;
        history.train.push_back(train_sum * inv);
        history.main.push_back(main_sum * inv);
        history.aux.push_back(aux_sum * inv);
        history.rot.push_back(rot_sum * inv);
        history.recon.push_back(recon_sum * inv);
        history.lr.push_back(opt.lr);
        if (update_lr_on_saturation(history, opt, config)) history.drop_epochs.push_back(epoch);
    }

    return {std::move(params), std::move(history)};
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

std::vector<double> finite_difference_gradient(
    const std::function<double(const ModelParams&)>& loss_evaluator, const ModelParams& params,
    const std::vector<ParamCoord>& coords, double epsilon) {
    if (!(epsilon > 0.0)) throw NumericError("finite-difference epsilon must be positive");
    ModelParams work = params;
    std::vector<double> out;
    out.reserve(coords.size());
    for (const auto& c : coords) {
        auto& arr = work.set.at(c.array);
        if (c.index >= arr.data.size())
            throw ValidationError("finite-difference coordinate out of range for " + c.array);
        const double orig = arr.data[c.index];
        arr.data[c.index] = orig + epsilon;
        const double f_plus = loss_evaluator(work);
        arr.data[c.index] = orig - epsilon;
        const double f_minus = loss_evaluator(work);
        arr.data[c.index] = orig;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw NumericError("non-finite loss during finite-difference evaluation");
        out.push_back((f_plus - f_minus) / (2.0 * epsilon));
    }
    return out;
}

}  // namespace pttt
