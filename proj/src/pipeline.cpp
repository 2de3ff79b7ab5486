#include "pttt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "pttt/checkpoint.hpp"
#include "pttt/digest.hpp"
#include "pttt/metrics.hpp"
#include "pttt/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pttt {

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << content;
    if (!f) throw FormatError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string directory_digest(const std::string& dir) {
    if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            files.push_back(fs::relative(e.path(), dir).generic_string());
    std::sort(files.begin(), files.end());
    Fnv1a64 h;
    for (const auto& rel : files) {
        h.update(rel);
        h.update(read_text_file(dir + "/" + rel));
    }
    return h.hex();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void check_known_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw ConfigError("unknown config key '" + key + "' in " + where);
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::resolve() {
    train.seed = seed_mix({seed, 0x747261696eULL});
    ttt.seed = seed_mix({seed, 0x747474ULL});
    shift.seed = seed_mix({seed, 0x7368696674ULL});
    arch.image_size = scene.width;
    scene.resolution_divisor = arch.downsample();
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (scene.width != scene.height) throw ConfigError("scene must be square");
    if (synth_videos < 1) throw ConfigError("synth_videos must be >= 1");
    if (prompt_anatomy < 1 || prompt_anatomy > 12)
        throw ConfigError("prompt_anatomy must be a label in 1..12");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
    arch.validate();
    train.validate();
    ttt.validate();
}

json ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["synth"] = json{{"videos", synth_videos},
                      {"frames", scene.frames},
                      {"width", scene.width},
                      {"height", scene.height},
                      {"max_bolus_step", scene.max_bolus_step},
                      {"shift", json{{"gamma", shift.gamma},
                                     {"noise_sigma", shift.noise_sigma},
                                     {"brightness", shift.brightness},
                                     {"contrast", shift.contrast}}}};
    j["arch"] = arch_to_json(arch);
    j["train"] = json{{"lambda", train.lambda},
                      {"learning_rate", train.learning_rate},
                      {"batch_size", train.batch_size},
                      {"epochs", train.epochs},
                      {"lr_drop_factor", train.lr_drop_factor},
                      {"saturation_patience", train.saturation_patience},
                      {"saturation_tolerance", train.saturation_tolerance},
                      {"train_baseline_heads", train.train_baseline_heads},
                      {"head_loss_weight", train.head_loss_weight},
                      {"box_jitter_frac", train.box_jitter_frac},
                      {"crop_scale_min", train.crop_scale_min},
                      {"flip_prob", train.flip_prob},
                      {"mae_mask_ratio", train.mae_mask_ratio}};
    j["ttt"] = json{{"learning_rate", ttt.learning_rate},
                    {"steps_per_frame", ttt.steps_per_frame},
                    {"loops", ttt.loops},
                    {"n_points", ttt.n_points},
                    {"gamma_min", ttt.gamma_min},
                    {"gamma_max", ttt.gamma_max},
                    {"brightness_range", ttt.brightness_range},
                    {"noise_sigma_max", ttt.noise_sigma_max},
                    {"mae_mask_ratio", ttt.mae_mask_ratio},
                    {"lr_drop_factor", ttt.lr_drop_factor},
                    {"saturation_patience", ttt.saturation_patience},
                    {"saturation_tolerance", ttt.saturation_tolerance}};
    j["eval"] = json{{"prompt_anatomy", prompt_anatomy}, {"threshold", threshold}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    check_known_keys(j, {"seed", "threads", "synth", "arch", "train", "ttt", "eval"}, "root");
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);

    if (j.contains("synth")) {
        const json& s = j.at("synth");
        check_known_keys(s, {"videos", "frames", "width", "height", "max_bolus_step", "shift"},
                         "synth");
        maybe(s, "videos", c.synth_videos);
        maybe(s, "frames", c.scene.frames);
        maybe(s, "width", c.scene.width);
        maybe(s, "height", c.scene.height);
        maybe(s, "max_bolus_step", c.scene.max_bolus_step);
        if (s.contains("shift")) {
            const json& sh = s.at("shift");
            check_known_keys(sh, {"gamma", "noise_sigma", "brightness", "contrast"}, "synth.shift");
            maybe(sh, "gamma", c.shift.gamma);
            maybe(sh, "noise_sigma", c.shift.noise_sigma);
            maybe(sh, "brightness", c.shift.brightness);
            maybe(sh, "contrast", c.shift.contrast);
        }
    }
    if (j.contains("arch")) {
        const json& a = j.at("arch");
        check_known_keys(a,
                         {"image_size", "enc_channels", "embed_dim", "dec_channels", "pe_min_freq",
                          "pe_max_freq", "init_scale", "rot_head_hidden"},
                         "arch");
        maybe(a, "image_size", c.arch.image_size);
        maybe(a, "enc_channels", c.arch.enc_channels);
        maybe(a, "embed_dim", c.arch.embed_dim);
        maybe(a, "dec_channels", c.arch.dec_channels);
        maybe(a, "pe_min_freq", c.arch.pe_min_freq);
        maybe(a, "pe_max_freq", c.arch.pe_max_freq);
        maybe(a, "init_scale", c.arch.init_scale);
        maybe(a, "rot_head_hidden", c.arch.rot_head_hidden);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_known_keys(t,
                         {"lambda", "learning_rate", "batch_size", "epochs", "lr_drop_factor",
                          "saturation_patience", "saturation_tolerance", "train_baseline_heads",
                          "head_loss_weight", "box_jitter_frac", "crop_scale_min", "flip_prob",
                          "mae_mask_ratio"},
                         "train");
        maybe(t, "lambda", c.train.lambda);
        maybe(t, "learning_rate", c.train.learning_rate);
        maybe(t, "batch_size", c.train.batch_size);
        maybe(t, "epochs", c.train.epochs);
        maybe(t, "lr_drop_factor", c.train.lr_drop_factor);
        maybe(t, "saturation_patience", c.train.saturation_patience);
        maybe(t, "saturation_tolerance", c.train.saturation_tolerance);
        maybe(t, "train_baseline_heads", c.train.train_baseline_heads);
        maybe(t, "head_loss_weight", c.train.head_loss_weight);
        maybe(t, "box_jitter_frac", c.train.box_jitter_frac);
        maybe(t, "crop_scale_min", c.train.crop_scale_min);
        maybe(t, "flip_prob", c.train.flip_prob);
        maybe(t, "mae_mask_ratio", c.train.mae_mask_ratio);
    }
    if (j.contains("ttt")) {
        const json& t = j.at("ttt");
        check_known_keys(t,
                         {"learning_rate", "steps_per_frame", "loops", "n_points", "gamma_min",
                          "gamma_max", "brightness_range", "noise_sigma_max", "mae_mask_ratio",
                          "lr_drop_factor", "saturation_patience", "saturation_tolerance"},
                         "ttt");
        maybe(t, "learning_rate", c.ttt.learning_rate);
        maybe(t, "steps_per_frame", c.ttt.steps_per_frame);
        maybe(t, "loops", c.ttt.loops);
        maybe(t, "n_points", c.ttt.n_points);
        maybe(t, "gamma_min", c.ttt.gamma_min);
        maybe(t, "gamma_max", c.ttt.gamma_max);
        maybe(t, "brightness_range", c.ttt.brightness_range);
        maybe(t, "noise_sigma_max", c.ttt.noise_sigma_max);
        maybe(t, "mae_mask_ratio", c.ttt.mae_mask_ratio);
        maybe(t, "lr_drop_factor", c.ttt.lr_drop_factor);
        maybe(t, "saturation_patience", c.ttt.saturation_patience);
        maybe(t, "saturation_tolerance", c.ttt.saturation_tolerance);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_known_keys(e, {"prompt_anatomy", "threshold"}, "eval");
        maybe(e, "prompt_anatomy", c.prompt_anatomy);
        maybe(e, "threshold", c.threshold);
    }
    c.resolve();
    return c;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Command plumbing
// ---------------------------------------------------------------------------

namespace {

int guard(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}

void prepare_out_dir(const ExperimentConfig& config, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw ConfigError("cannot create output directory: " + out_dir);
    // Probe writability early so failures map to a usage error.
    const std::string probe = out_dir + "/config.json";
    write_text_file(probe, config.to_json().dump(2) + "\n");
    set_max_threads(config.threads > 0 ? config.threads : 0);
}

std::vector<VideoSequence> select_split(std::vector<VideoSequence>& videos,
                                        const DatasetManifest& manifest,
                                        const std::string& split) {
    std::vector<VideoSequence> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].split == split) out.push_back(std::move(videos[i]));
    return out;
}

std::string records_csv_header() {
    return "seed,mode,video,frame,anatomy,anatomy_name,dsc,hd95,asd,sensitivity,"
           "distances_defined,sensitivity_defined\n";
}

void append_record(std::string& csv, std::uint64_t seed, const std::string& mode,
                   const std::string& video, const MetricsRecord& r) {
    csv += std::to_string(seed) + "," + mode + "," + video + "," + std::to_string(r.frame_index) +
           "," + std::to_string(r.anatomy_label) + "," + anatomy_name(r.anatomy_label) + "," +
           format_double(r.dsc) + "," +
           (r.distances_defined ? format_double(r.hd95) : std::string("nan")) + "," +
           (r.distances_defined ? format_double(r.asd) : std::string("nan")) + "," +
           (r.sensitivity_defined ? format_double(r.sensitivity) : std::string("nan")) + "," +
           (r.distances_defined ? "1" : "0") + "," + (r.sensitivity_defined ? "1" : "0") + "\n";
}

std::string summary_csv(const MetricsSummary& s, std::uint64_t seed, const std::string& mode) {
    std::string csv = "seed,mode,dsc,hd95,asd,sensitivity,instances,undefined\n";
    csv += std::to_string(seed) + "," + mode + "," + format_double(s.overall.dsc) + "," +
           format_double(s.overall.hd95) + "," + format_double(s.overall.asd) + "," +
           format_double(s.overall.sensitivity) + "," + std::to_string(s.overall.count) + "," +
           std::to_string(s.overall.undefined_count) + "\n";
    return csv;
}

std::string per_anatomy_csv(const MetricsSummary& s, std::uint64_t seed, const std::string& mode) {
    std::string csv = "seed,mode,anatomy,anatomy_name,dsc,hd95,asd,sensitivity,instances,undefined\n";
    for (const auto& a : s.per_anatomy)
        csv += std::to_string(seed) + "," + mode + "," + std::to_string(a.anatomy_label) + "," +
               anatomy_name(a.anatomy_label) + "," + format_double(a.dsc) + "," +
               format_double(a.hd95) + "," + format_double(a.asd) + "," +
               format_double(a.sensitivity) + "," + std::to_string(a.count) + "," +
               std::to_string(a.undefined_count) + "\n";
    csv += std::to_string(seed) + "," + mode + ",0,average," + format_double(s.overall.dsc) + "," +
           format_double(s.overall.hd95) + "," + format_double(s.overall.asd) + "," +
           format_double(s.overall.sensitivity) + "," + std::to_string(s.overall.count) + "," +
           std::to_string(s.overall.undefined_count) + "\n";
    return csv;
}

std::string per_anatomy_markdown(const MetricsSummary& s, const std::string& mode) {
    std::string md = "| Anatomy | DSC | HD95 | ASD | Sensitivity |\n|---|---|---|---|---|\n";
    char buf[160];
    for (const auto& a : s.per_anatomy) {
        std::snprintf(buf, sizeof(buf), "| %s | %.3f | %.3f | %.3f | %.3f |\n",
                      anatomy_name(a.anatomy_label), a.dsc, a.hd95, a.asd, a.sensitivity);
        md += buf;
    }
    std::snprintf(buf, sizeof(buf), "| **average** | %.3f | %.3f | %.3f | %.3f |\n",
                  s.overall.dsc, s.overall.hd95, s.overall.asd, s.overall.sensitivity);
    md += buf;
    return "Per-anatomy results, mode `" + mode + "` (DSC up, HD95/ASD down in pixels):\n\n" + md;
}

}  // namespace

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const ExperimentConfig& config, const std::string& out_dir) {
    return guard([&] {
        prepare_out_dir(config, out_dir);
        const std::uint64_t base = seed_mix({config.seed, 0x73796e7468ULL});

        std::vector<VideoSequence> videos;
        for (int i = 0; i < config.synth_videos; ++i) {
            VideoSequence v =
                generate_video(seed_mix({base, static_cast<std::uint64_t>(i)}), config.scene);
            char name[32];
            std::snprintf(name, sizeof(name), "video_%03d", i);
            v.meta.name = name;
            videos.push_back(std::move(v));
        }
        DatasetManifest manifest = split_dataset(videos, seed_mix({base, 0x73706cULL}));
        save_dataset(videos, manifest, out_dir + "/source");

        // Target domain: the test-split videos under the photometric shift.
        std::vector<VideoSequence> target;
        DatasetManifest target_manifest;
        target_manifest.format_version = manifest.format_version;
        for (std::size_t i = 0; i < videos.size(); ++i) {
            if (manifest.entries[i].split != "test") continue;
            ShiftSpec spec = config.shift;
            spec.seed = seed_mix({config.shift.seed, static_cast<std::uint64_t>(i)});
            VideoSequence shifted = apply_domain_shift(videos[i], spec);
            ManifestEntry e = manifest.entries[i];
            e.shifted = true;
            e.shift = spec;
            target_manifest.entries.push_back(e);
            target.push_back(std::move(shifted));
        }
        save_dataset(target, target_manifest, out_dir + "/target");
        std::cout << "synth: " << videos.size() << " videos ("
                  << manifest.split_indices("train").size() << " train, "
                  << manifest.split_indices("test").size() << " test), target dir holds "
                  << target.size() << " shifted test videos\n";
    });
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const ExperimentConfig& config, const std::string& data_dir,
              const std::string& out_dir) {
    return guard([&] {
        if (!fs::is_directory(data_dir)) throw ConfigError("data directory not found: " + data_dir);
        prepare_out_dir(config, out_dir);

        auto [videos, manifest] = load_dataset(data_dir);
        std::vector<VideoSequence> train_videos = select_split(videos, manifest, "train");
        if (train_videos.empty()) throw ConfigError("dataset has no train-split videos");

        auto [params, history] = fit(train_videos, config.train, config.arch);
        save_checkpoint(out_dir + "/checkpoint", params, nullptr, config.to_json());

        std::string csv = "epoch,train,main,aux,rot,recon,lr\n";
        for (std::size_t e = 0; e < history.train.size(); ++e)
            csv += std::to_string(e) + "," + format_double(history.train[e]) + "," +
                   format_double(history.main[e]) + "," + format_double(history.aux[e]) + "," +
                   format_double(history.rot[e]) + "," + format_double(history.recon[e]) + "," +
                   format_double(history.lr[e]) + "\n";
        write_text_file(out_dir + "/history.csv", csv);

        std::string drops;
        for (int e : history.drop_epochs) drops += (drops.empty() ? "" : " ") + std::to_string(e);
        std::cout << "train: " << history.train.size() << " epochs";
        if (!history.train.empty())
            std::cout << ", loss " << format_double(history.train.front()) << " -> "
                      << format_double(history.train.back());
        if (!drops.empty()) std::cout << ", lr drops at [" << drops << "]";
        std::cout << "\n";
    });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

namespace {

struct EvalOutcome {
    std::vector<MetricsRecord> records;
    MetricsSummary summary;
    std::string records_csv;
};

EvalOutcome evaluate_videos(const ExperimentConfig& config, const ModelParams& pristine,
                            const std::vector<VideoSequence>& videos, TTTMode mode,
                            const std::string& mode_name, bool oracle,
                            const std::string& out_dir, std::ostream& log) {
    EvalOutcome out;
    out.records_csv = records_csv_header();

    for (std::size_t vi = 0; vi < videos.size(); ++vi) {
        const VideoSequence& video = videos[vi];
        const std::string pristine_digest = param_digest(pristine, "encoder");
        log << "video " << video.meta.name << ": adaptation starts from pristine checkpoint "
            << "(encoder digest " << pristine_digest << ")\n";

        ModelParams adapted = pristine;
        if (!oracle && mode != TTTMode::none) {
            std::vector<BinaryMask> prompt_masks;
            for (int t = 0; t < video.frame_count(); ++t)
                prompt_masks.push_back(video.mask_of(t, config.prompt_anatomy));
            auto [params, trace] = adapt_video(video, &prompt_masks, pristine, config.ttt, mode);
            adapted = std::move(params);
            std::ostringstream trace_csv;
            trace.write_csv(trace_csv);
            if (!out_dir.empty())
                write_text_file(out_dir + "/trace_" + video.meta.name + ".csv", trace_csv.str());
            log << "video " << video.meta.name << ": adapted encoder digest "
                << param_digest(adapted, "encoder") << ", decoders frozen (dseg "
                << param_digest(adapted, "dseg") << ", daux " << param_digest(adapted, "daux")
                << ")\n";
        }

        // Per-frame, per-anatomy box-prompted inference.
        const int T = video.frame_count();
        std::vector<std::vector<MetricsRecord>> frame_records(static_cast<std::size_t>(T));
        parallel_for(static_cast<std::size_t>(T), [&](std::size_t t) {
            const Image& frame = video.frames[t];
            for (const auto& a : anatomy_catalog()) {
                const BinaryMask& gt = video.mask_of(static_cast<int>(t), a.code);
                if (gt.empty_mask()) continue;
                MaskProb pred;
                if (oracle) {
                    pred = MaskProb(gt.h, gt.w);
                    for (std::size_t i = 0; i < gt.v.size(); ++i) pred.v[i] = gt.v[i] ? 1.0 : 0.0;
                } else {
                    pred = infer_after_ttt(frame, mask_bounding_box(gt), adapted);
                }
                frame_records[t].push_back(evaluate_instance(pred, gt, a.code, static_cast<int>(t),
                                                             config.threshold));
            }
        });
        for (int t = 0; t < T; ++t)
            for (const auto& r : frame_records[static_cast<std::size_t>(t)]) {
                out.records.push_back(r);
                append_record(out.records_csv, config.seed, mode_name, video.meta.name, r);
            }
    }

    out.summary = aggregate_records(out.records);
    return out;
}

}  // namespace

int cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_dir,
             const std::string& data_dir, const std::string& mode, const std::string& out_dir) {
    return guard([&] {
        const bool oracle = mode == "oracle";
        TTTMode ttt_mode = TTTMode::none;
        if (!oracle) ttt_mode = ttt_mode_from_string(mode);
        if (!fs::is_directory(data_dir)) throw ConfigError("data directory not found: " + data_dir);
        prepare_out_dir(config, out_dir);

        LoadedCheckpoint ckpt = load_checkpoint(checkpoint_dir);
        ExperimentConfig run_config = config;
        run_config.arch = ckpt.params.arch;  // checkpoint architecture is authoritative

        auto [videos, manifest] = load_dataset(data_dir);
        if (videos.empty()) throw ConfigError("dataset is empty: " + data_dir);

        std::ostringstream log;
        const EvalOutcome outcome = evaluate_videos(run_config, ckpt.params, videos, ttt_mode,
                                                    mode, oracle, out_dir, log);

        write_text_file(out_dir + "/records.csv", outcome.records_csv);
        write_text_file(out_dir + "/summary.csv", summary_csv(outcome.summary, config.seed, mode));
        write_text_file(out_dir + "/per_anatomy.csv",
                        per_anatomy_csv(outcome.summary, config.seed, mode));
        write_text_file(out_dir + "/per_anatomy.md",
                        per_anatomy_markdown(outcome.summary, mode));
        write_text_file(out_dir + "/eval.log", log.str());

        std::cout << "eval mode=" << mode << ": dsc=" << format_double(outcome.summary.overall.dsc)
                  << " hd95=" << format_double(outcome.summary.overall.hd95)
                  << " asd=" << format_double(outcome.summary.overall.asd)
                  << " sensitivity=" << format_double(outcome.summary.overall.sensitivity)
                  << " (" << outcome.summary.overall.count << " instances)\n";
    });
}

// ---------------------------------------------------------------------------
// ablate-prompts
// ---------------------------------------------------------------------------

int cmd_ablate_prompts(const ExperimentConfig& config, const std::string& checkpoint_dir,
                       const std::string& data_dir, const std::vector<int>& n_points_list,
                       const std::string& out_dir) {
    return guard([&] {
        if (n_points_list.empty()) throw ConfigError("ablation needs at least one n_points value");
        if (!fs::is_directory(data_dir)) throw ConfigError("data directory not found: " + data_dir);
        prepare_out_dir(config, out_dir);

        LoadedCheckpoint ckpt = load_checkpoint(checkpoint_dir);
        ExperimentConfig run_config = config;
        run_config.arch = ckpt.params.arch;

        auto [videos, manifest] = load_dataset(data_dir);
        if (videos.empty()) throw ConfigError("dataset is empty: " + data_dir);

        std::string csv = "seed,n_points,dsc,hd95,asd,sensitivity,instances\n";
        std::string md = "| point prompts | DSC | HD95 | ASD | Sensitivity |\n|---|---|---|---|---|\n";
        std::ostringstream log;
        for (int n : n_points_list) {
            if (n < 1) throw ConfigError("n_points values must be >= 1");
            ExperimentConfig cfg_n = run_config;
            cfg_n.ttt.n_points = n;  // same seed, so augmentation streams are shared
            const EvalOutcome outcome = evaluate_videos(cfg_n, ckpt.params, videos,
                                                        TTTMode::prompt, "prompt_ttt", false, "",
                                                        log);
            csv += std::to_string(config.seed) + "," + std::to_string(n) + "," +
                   format_double(outcome.summary.overall.dsc) + "," +
                   format_double(outcome.summary.overall.hd95) + "," +
                   format_double(outcome.summary.overall.asd) + "," +
                   format_double(outcome.summary.overall.sensitivity) + "," +
                   std::to_string(outcome.summary.overall.count) + "\n";
            char buf[160];
            std::snprintf(buf, sizeof(buf), "| %d | %.3f | %.3f | %.3f | %.3f |\n", n,
                          outcome.summary.overall.dsc, outcome.summary.overall.hd95,
                          outcome.summary.overall.asd, outcome.summary.overall.sensitivity);
            md += buf;
        }
        md += "\nFull-scale VFSS reference (MedSAM backbone): DSC 0.881 (n=1), 0.875 (n=3), "
              "0.867 (n=5); shown for orientation only, not asserted at this scale.\n";

        write_text_file(out_dir + "/ablation.csv", csv);
        write_text_file(out_dir + "/ablation.md", md);
        write_text_file(out_dir + "/ablate.log", log.str());
        std::cout << "ablate-prompts: wrote " << out_dir << "/ablation.csv\n";
    });
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

}  // namespace

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    return guard([&] {
        if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
        std::vector<std::string> header;
        // mode -> metric column -> values across runs
        std::map<std::string, std::map<std::string, std::vector<double>>> by_mode;
        std::vector<std::string> metric_cols = {"dsc", "hd95", "asd", "sensitivity"};

        for (const auto& dir : run_dirs) {
            const std::string path = dir + "/summary.csv";
            if (!fs::exists(path)) throw ConfigError("missing summary.csv in run dir: " + dir);
            const CsvTable t = parse_csv(read_text_file(path));
            if (header.empty()) {
                header = t.header;
            } else if (header != t.header) {
                std::string diff = "run " + dir + " has columns [";
                for (const auto& h : t.header) diff += h + " ";
                diff += "] but expected [";
                for (const auto& h : header) diff += h + " ";
                diff += "]";
                throw ConfigError("mismatched metric columns: " + diff);
            }
            auto col_of = [&](const std::string& name) {
                for (std::size_t i = 0; i < t.header.size(); ++i)
                    if (t.header[i] == name) return static_cast<int>(i);
                throw ConfigError("column '" + name + "' missing in " + path);
            };
            for (const auto& row : t.rows) {
                const std::string mode = row[static_cast<std::size_t>(col_of("mode"))];
                for (const auto& m : metric_cols)
                    by_mode[mode][m].push_back(
                        std::stod(row[static_cast<std::size_t>(col_of(m))]));
            }
        }

        fs::create_directories(out_dir);
        std::string md = "# Consolidated results\n\nSeed mean +/- std over " +
                         std::to_string(run_dirs.size()) + " run(s).\n\n";
        md += "| Mode | DSC | HD95 | ASD | Sensitivity |\n|---|---|---|---|---|\n";
        std::string csv = "mode";
        for (const auto& m : metric_cols) csv += "," + m + "_mean," + m + "_std";
        csv += ",runs\n";
        for (const auto& [mode, metrics] : by_mode) {
            md += "| " + mode + " |";
            csv += mode;
            for (const auto& m : metric_cols) {
                const auto& vals = metrics.at(m);
                double mean = 0.0;
                for (double v : vals) mean += v;
                mean /= static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals) var += (v - mean) * (v - mean);
                const double stddev =
                    vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
                char buf[64];
                std::snprintf(buf, sizeof(buf), " %.3f +/- %.3f |", mean, stddev);
                md += buf;
                csv += "," + format_double(mean) + "," + format_double(stddev);
            }
            csv += "," + std::to_string(metrics.at("dsc").size()) + "\n";
            md += "\n";
        }
        write_text_file(out_dir + "/report.md", md);
        write_text_file(out_dir + "/report.csv", csv);
        std::cout << "report: wrote " << out_dir << "/report.md\n";
    });
}

}  // namespace pttt
