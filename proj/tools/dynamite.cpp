#include "dynamite/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>

using namespace dynamite;

namespace {

pipeline::PipelineConfig configure(const std::string& path, const std::string& out) {
    auto config = pipeline::load_config(path);
    if (!out.empty()) config.out_dir = out;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic defense selection for tabular intrusion-detection models"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    unsigned threads = 1;

    std::vector<std::pair<CLI::App*, pipeline::Stage>> stages;
    for (auto stage : pipeline::kAllStages) {
        auto* cmd = app.add_subcommand(std::string(pipeline::to_string(stage)), "Run one pipeline stage");
        cmd->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out", out_dir, "Output directory (overrides output.dir)");
        cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
        stages.emplace_back(cmd, stage);
    }
    auto* all = app.add_subcommand("run-all", "Run every stage in order");
    all->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    all->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    all->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "Re-render the report tables from stored artifacts");
    report->add_option("--out", out_dir, "Output directory of a finished run")->required();

    auto* validate = app.add_subcommand("validate-config", "Print the normalized config");
    validate->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const pipeline::RunOptions options{threads};
        if (*all) {
            pipeline::run_all(configure(config_path, out_dir), options);
        } else if (*report) {
            pipeline::render_report(out_dir);
            std::cout << (std::filesystem::path(out_dir) / "evaluate" / "report.txt").string() << '\n';
        } else if (*validate) {
            std::cout << pipeline::load_config(config_path).to_json().dump(2) << '\n';
        } else {
            for (const auto& [cmd, stage] : stages) {
                if (*cmd) pipeline::run_stage(stage, configure(config_path, out_dir), options);
            }
        }
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 2;
    } catch (const ArtifactError& e) {
        fmt::print(stderr, "artifact error: {}\n", e.what());
        return 3;
    } catch (const InvariantError& e) {
        fmt::print(stderr, "invariant violated: {}\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
