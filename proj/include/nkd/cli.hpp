#pragma once
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nkd/gradcheck.hpp"
#include "nkd/harness.hpp"

// CLI front end: run, gradcheck, eval, export-metrics, sweep.
// Exit codes: 0 ok, 2 config error, 3 numerical failure, 1 anything else.

namespace nkd {

inline int sweep_configs(const std::string& config_dir, const std::string& export_dir,
                         const std::vector<std::string>& overrides) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(config_dir)) throw ConfigError("sweep: not a directory: " + config_dir);
    std::vector<fs::path> configs;
    for (const auto& entry : fs::directory_iterator(config_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            configs.push_back(entry.path());
    std::sort(configs.begin(), configs.end());
    if (configs.empty()) throw ConfigError("sweep: no .json configs under " + config_dir);
    for (const auto& path : configs) {
        std::cout << "=== " << path.filename().string() << "\n";
        ExperimentConfig cfg = load_config(path.string(), overrides);
        RunResult r = run(cfg);
        std::cout << "final top1 " << r.final_row.test_top1 << " (" << r.checkpoint_path << ")\n";
    }
    if (!export_dir.empty()) {
        ExportResult ex = export_metrics(export_dir);
        std::cout << "merged " << ex.rows << " rows from " << ex.files << " runs into "
                  << ex.merged_path << "\n";
    }
    return 0;
}

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"NKD/USKD distillation-loss engine and experiment harness"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, images_path, labels_path, format = "idx";
    std::string dir_path, export_dir;
    std::vector<std::string> overrides;
    int limit = 0;

    auto* run_cmd = app.add_subcommand("run", "train one experiment from a config");
    run_cmd->add_option("--config", config_path, "JSON experiment config")->required();
    run_cmd->add_option("--set", overrides, "override config values, key.path=value");

    auto* grad_cmd = app.add_subcommand("gradcheck", "audit analytic gradients for a recipe");
    grad_cmd->add_option("--config", config_path, "JSON experiment config")->required();
    grad_cmd->add_option("--set", overrides, "override config values, key.path=value");

    auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", ckpt_path, "DKCK checkpoint")->required();
    eval_cmd->add_option("--images", images_path, "IDX image file / CIFAR binary")->required();
    eval_cmd->add_option("--labels", labels_path, "IDX label file (unused for cifar)");
    eval_cmd->add_option("--format", format, "idx or cifar");
    eval_cmd->add_option("--limit", limit, "evaluate only a subsample");

    auto* export_cmd = app.add_subcommand("export-metrics", "merge run CSVs and summarize");
    export_cmd->add_option("--dir", dir_path, "directory containing run outputs")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "run every config in a directory");
    sweep_cmd->add_option("--configs", dir_path, "directory of JSON configs")->required();
    sweep_cmd->add_option("--export", export_dir, "directory to merge metrics from afterwards");
    sweep_cmd->add_option("--set", overrides, "override applied to every config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (run_cmd->parsed()) {
            ExperimentConfig cfg = load_config(config_path, overrides);
            RunResult r = run(cfg);
            std::cout << "final: " << to_csv(r.final_row) << "\n"
                      << "checkpoint: " << r.checkpoint_path << "\n";
            return 0;
        }
        if (grad_cmd->parsed()) {
            ExperimentConfig cfg = load_config(config_path, overrides);
            GradcheckReport report = gradcheck(cfg);
            for (const auto& line : report.lines) std::cout << line << "\n";
            std::cout << "max relative error " << report.max_rel_err << " over " << report.probes
                      << " probes: " << (report.pass ? "OK" : "FAIL") << "\n";
            return report.pass ? 0 : 3;
        }
        if (eval_cmd->parsed()) {
            if (format != "cifar" && labels_path.empty())
                throw ConfigError("eval: --labels is required for idx datasets");
            double top1 = eval_checkpoint(ckpt_path, images_path, labels_path, format, limit);
            std::cout << "top1 " << top1 << "\n";
            return 0;
        }
        if (export_cmd->parsed()) {
            ExportResult ex = export_metrics(dir_path);
            if (ex.skipped)
                std::cerr << "warning: skipped " << ex.skipped << " malformed rows\n";
            std::cout << "merged " << ex.rows << " rows from " << ex.files << " files\n"
                      << ex.merged_path << "\n"
                      << ex.summary_path << "\n";
            return 0;
        }
        if (sweep_cmd->parsed()) return sweep_configs(dir_path, export_dir, overrides);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace nkd
