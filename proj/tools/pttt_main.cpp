// Command-line front end: dataset synthesis, source training, test-time
// adaptation + evaluation, prompt-count ablation, and report consolidation.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pttt/kernels.hpp"
#include "pttt/pipeline.hpp"

namespace {

pttt::ExperimentConfig load_config(const std::string& config_path, bool seed_set,
                                   std::uint64_t seed, int threads) {
    pttt::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = pttt::ExperimentConfig::load_file(config_path);
    if (seed_set) cfg.seed = seed;
    if (threads >= 0) cfg.threads = threads;
    if (const char* env = std::getenv("PTTT_SEED"); env && !seed_set)
        cfg.seed = std::strtoull(env, nullptr, 10);
    if (const char* env = std::getenv("PTTT_THREADS"); env && threads < 0)
        cfg.threads = static_cast<int>(std::strtol(env, nullptr, 10));
    cfg.resolve();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-guided test-time training for promptable segmentation"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
    app.add_option("--config", config_path, "JSON experiment config (defaults apply when omitted)")
        ->each([](const std::string&) {});
    app.add_option("--seed", seed, "global seed override (env: PTTT_SEED)")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--threads", threads, "worker thread cap (env: PTTT_THREADS)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate source + shifted target datasets");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "source training on the train split");
    std::string train_data, train_out;
    train->add_option("--data", train_data, "dataset directory (source)")->required();
    train->add_option("--out", train_out, "output directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, optionally with TTT");
    std::string eval_ckpt, eval_data, eval_mode = "none", eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", eval_data, "dataset directory (target)")->required();
    eval->add_option("--mode", eval_mode, "none|prompt_ttt|rot_ttt|mae_ttt|oracle");
    eval->add_option("--out", eval_out, "output directory")->required();

    // ablate-prompts
    auto* ablate = app.add_subcommand("ablate-prompts", "prompt-count ablation (prompt_ttt)");
    std::string ab_ckpt, ab_data, ab_out;
    std::vector<int> ab_n = {1, 3, 5};
    ablate->add_option("--checkpoint", ab_ckpt, "checkpoint directory")->required();
    ablate->add_option("--data", ab_data, "dataset directory (target)")->required();
    ablate->add_option("--n", ab_n, "point-prompt counts");
    ablate->add_option("--out", ab_out, "output directory")->required();

    // report
    auto* report = app.add_subcommand("report", "merge run directories into one table");
    std::vector<std::string> report_runs;
    std::string report_out;
    report->add_option("--runs", report_runs, "run directories (containing summary.csv)");
    report->add_option("--out", report_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const pttt::ExperimentConfig cfg = load_config(config_path, seed_set, seed, threads);
        if (synth->parsed()) return pttt::cmd_synth(cfg, synth_out);
        if (train->parsed()) return pttt::cmd_train(cfg, train_data, train_out);
        if (eval->parsed()) return pttt::cmd_eval(cfg, eval_ckpt, eval_data, eval_mode, eval_out);
        if (ablate->parsed()) return pttt::cmd_ablate_prompts(cfg, ab_ckpt, ab_data, ab_n, ab_out);
        if (report->parsed()) return pttt::cmd_report(report_runs, report_out);
    } catch (const pttt::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
