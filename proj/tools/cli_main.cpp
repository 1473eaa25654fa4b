#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cuspflow/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"cuspflow: batch runner for branch-system spectral and flow reports"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    long long seed = -1;
    int threads = -1;
    bool verbose = false;
    app.add_option("--config", config_path, "config file (JSON)")->required();
    app.add_option("--out", out_dir, "output directory (overrides config and environment)");
    app.add_option("--seed", seed, "sampling seed (overrides config)");
    app.add_option("--threads", threads, "worker threads, 0 = available parallelism");
    app.add_flag("--verbose", verbose, "log written files to stderr");

    for (const char* c : cuspflow::kCommands) app.add_subcommand(c)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    cuspflow::RunOptions opt;
    opt.verbose = verbose;
    if (seed >= 0) opt.seed = static_cast<std::uint64_t>(seed);
    if (threads >= 0) opt.threads = threads;
    if (!out_dir.empty())
        opt.out_override = out_dir;
    else if (const char* env = std::getenv("CUSPFLOW_OUT"); env && *env)
        opt.out_override = env;

    const std::string command = app.get_subcommands().front()->get_name();
    return cuspflow::run_command_file(command, config_path, opt);
}
