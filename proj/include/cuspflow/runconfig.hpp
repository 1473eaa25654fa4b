#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cuspflow/spectral.hpp"

namespace cuspflow {

// Which branch system a run operates on. Builtin kinds cover the
// continued-fraction families; "group" runs the cusp coding on a group file.
struct SystemConfig {
    enum class Kind { gauss, gauss_subset, even_cf, group };
    Kind kind = Kind::gauss;
    int n_max = 200;            // gauss: branches 1..n_max plus the analytic tail
    std::vector<int> alphabet;  // gauss_subset
    double sup_floor = 1e-5;    // even_cf
    std::string group_file;     // group; relative paths resolve against the config
    CodingParams coding;
    int parabolic_depth = 26;
    double height_floor = -1.0; // < 0: h_schedule(max_generation) / eta / 2
    int induce_cap = 0;         // > 0: first-return induction with this excursion cap
};

struct ScanGrid {
    double lo = 0.0, hi = 0.0;
    int count = 0;
    std::vector<double> values() const;
};

struct RunConfig {
    SystemConfig system;
    DiscretizationParams disc;
    DeltaOptions bracket;

    ScanGrid scan_sigma, scan_b; // spectral-scan
    double l2_b = 20.0;          // l2-probe frequency, s = i * l2_b
    int l2_m_max = 100;
    double tail_delta = 1.0;
    double tail_epsilon = 0.4;
    int uni_n0 = 1;

    long long samples = 100000; // mix-estimate
    std::vector<double> times;
    std::uint64_t seed = 1;
    int threads = 0; // 0: available parallelism

    std::vector<double> radii; // orbit-count ladder

    std::vector<Vec> diag_points; // measure-diag probe points; empty: per-kind default

    std::string output_dir = "out";
    std::string origin; // config path, for resolving the group file
};

// Strict schema: unknown keys rejected by name, range checks on every numeric
// field, diagnostics anchored to the offending line of the config text.
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");
RunConfig load_config(const std::string& path);

struct ConfigDiagnostics {
    bool ok = false;
    std::vector<std::string> messages; // empty when ok
};

// Full check without partial loading; parse/validation failures become
// diagnostics instead of exceptions.
ConfigDiagnostics validate_config(const std::string& path);

} // namespace cuspflow
