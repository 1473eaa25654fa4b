#pragma once

#include <optional>
#include <string>

#include "cuspflow/runconfig.hpp"

namespace cuspflow {

struct RunOptions {
    std::string out_override; // --out / CUSPFLOW_OUT; empty keeps the config value
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool verbose = false;
};

inline constexpr const char* kCommands[] = {
    "code-build", "delta-estimate", "tail-report", "uni-check", "spectral-scan",
    "l2-probe",   "mix-estimate",   "orbit-count", "measure-diag",
};

// Runs one command against a validated config; writes reports atomically under
// the output directory and a one-line JSON status to stdout. Returns the
// process exit status: 0 ok, 2 validation error, 3 computation error.
int run_command(const std::string& command, const RunConfig& cfg, const RunOptions& opt = {});

// Loads + validates the config first, so schema problems also map to exit 2.
int run_command_file(const std::string& command, const std::string& config_path,
                     const RunOptions& opt = {});

} // namespace cuspflow
