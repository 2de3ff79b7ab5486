#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pttt/model.hpp"
#include "pttt/synthdata.hpp"
#include "pttt/trainer.hpp"
#include "pttt/ttt.hpp"

namespace pttt {

// Fully-defaulted experiment configuration; JSON parsing is strict (unknown
// keys are rejected) and the resolved form is echoed into every output
// directory. Per-module seeds are derived from the single global seed.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency

    int synth_videos = 10;
    SceneConfig scene;
    ShiftSpec shift{0.6, 0.1, 0.0, 1.0, 0};

    ArchConfig arch;
    TrainConfig train;
    TTTConfig ttt;

    int prompt_anatomy = 2;  // adaptation prompts come from this label (pharynx)
    double threshold = 0.5;

    void resolve();  // derive per-module seeds, propagate shared dims, validate

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load_file(const std::string& path);
};

// Commands return process exit codes: 0 success, 1 internal failure,
// 2 usage/configuration error. Errors are reported on stderr.
int cmd_synth(const ExperimentConfig& config, const std::string& out_dir);
int cmd_train(const ExperimentConfig& config, const std::string& data_dir,
              const std::string& out_dir);
int cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_dir,
             const std::string& data_dir, const std::string& mode, const std::string& out_dir);
int cmd_ablate_prompts(const ExperimentConfig& config, const std::string& checkpoint_dir,
                       const std::string& data_dir, const std::vector<int>& n_points_list,
                       const std::string& out_dir);
int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Small file helpers shared with the test suites.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
std::string directory_digest(const std::string& dir);
std::string format_double(double v);

}  // namespace pttt
