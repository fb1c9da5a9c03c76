// Command-line front end for the cohort motion-atlas pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure,
// 4 QC rejected every subject.

#include "cma/io.hpp"
#include "cma/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output;
    int jobs = 0;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Key=value configuration file");
    cmd->add_option("--set", opts.overrides, "Override a config key (KEY=VALUE, repeatable)");
    cmd->add_option("--output", opts.output, "Output directory (overrides config)");
    cmd->add_option("--jobs", opts.jobs, "Worker threads for subject-level parallelism");
    cmd->add_flag("--force", opts.force, "Ignore cached stage results");
}

cma::pipeline::PipelineConfig build_config(const CommonOptions& opts) {
    auto config = opts.config_path.empty()
                      ? cma::pipeline::PipelineConfig::from_overrides(opts.overrides)
                      : cma::pipeline::PipelineConfig::from_file(opts.config_path, opts.overrides);
    if (!opts.output.empty()) config.set("output", opts.output);
    if (opts.jobs > 0) config.set("jobs", std::to_string(opts.jobs));
    return config;
}

int dispatch(const std::string& stage, const CommonOptions& opts) {
    try {
        const auto config = build_config(opts);
        if (stage.empty() || stage == "run") {
            cma::pipeline::run_pipeline(config, opts.force);
        } else {
            cma::pipeline::run_stage(stage, config, opts.force);
        }
        if (stage == "qc") {
            const auto dir = config.output_dir();
            std::cout << cma::io::read_text_file(dir + "/qc/reports.jsonl");
            const auto summary = cma::io::read_text_file(dir + "/qc/qc_summary.json");
            if (summary.find("\"malformed\": 0") == std::string::npos) {
                std::cerr << "cma qc: malformed curves present\n";
                return 3;
            }
        }
        return 0;
    } catch (const cma::pipeline::ConfigError& e) {
        std::cerr << "cma: config error: " << e.what() << '\n';
        return 2;
    } catch (const cma::pipeline::EmptyCohortError& e) {
        std::cerr << "cma: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "cma: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cohort cardiac motion atlas pipeline"};
    app.require_subcommand(0, 1);

    CommonOptions opts;
    add_common(&app, opts);
    std::string stage_flag;
    app.add_option("--stage", stage_flag, "Run a single stage by name");

    const std::vector<std::string> stage_names = {"synth",  "qc",        "atlas", "features",
                                                  "embed",  "associate", "report"};
    struct SubcommandState {
        CLI::App* cmd;
        CommonOptions opts;
    };
    std::vector<SubcommandState> subs;
    subs.reserve(stage_names.size() + 1);
    for (const auto& name : stage_names) {
        SubcommandState state;
        state.cmd = app.add_subcommand(name, "Run the " + name + " stage");
        subs.push_back(state);
        add_common(subs.back().cmd, subs.back().opts);
    }
    SubcommandState run_state;
    run_state.cmd = app.add_subcommand("run", "Run the full pipeline");
    add_common(run_state.cmd, run_state.opts);

    std::string compare_a, compare_b;
    auto* report_cmd = subs[6].cmd;
    report_cmd->add_option("--compare", compare_a, "Compare against another run's manifest.json");
    report_cmd->add_option("--compare-with", compare_b,
                           "Left-hand manifest for --compare (defaults to this run's)");

    CLI11_PARSE(app, argc, argv);

    for (std::size_t i = 0; i < stage_names.size(); ++i) {
        if (subs[i].cmd->parsed()) {
            if (stage_names[i] == "report" && !compare_a.empty()) {
                try {
                    const auto config = build_config(subs[i].opts);
                    std::string left = compare_b.empty()
                                           ? config.output_dir() + "/manifest.json"
                                           : compare_b;
                    std::string right = compare_a;
                    if (std::filesystem::is_directory(right)) right += "/manifest.json";
                    if (std::filesystem::is_directory(left)) left += "/manifest.json";
                    std::cout << cma::pipeline::compare_runs(left, right);
                    return 0;
                } catch (const std::exception& e) {
                    std::cerr << "cma: " << e.what() << '\n';
                    return 3;
                }
            }
            return dispatch(stage_names[i], subs[i].opts);
        }
    }
    if (run_state.cmd->parsed()) return dispatch("run", run_state.opts);
    return dispatch(stage_flag, opts);
}
