#include "cuspflow/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "cuspflow/errors.hpp"
#include "cuspflow/flow.hpp"
#include "cuspflow/report.hpp"

namespace cuspflow {

namespace {

namespace fs = std::filesystem;

struct BuiltSystem {
    BranchSystem sys;
    bool gauss_analytic = false; // use the Hurwitz tail discretization
    int gauss_n_max = 0;
    GroupModel group;
    bool has_group = false;
    CodingResult coding;
    bool has_coding = false;
    double induced_truncated_mass = 0.0;
    std::vector<Vec> diag_points;
};

std::string resolve_path(const std::string& file, const std::string& origin) {
    fs::path p(file);
    if (p.is_absolute() || origin.empty() || origin == "<string>") return file;
    return (fs::path(origin).parent_path() / p).string();
}

BuiltSystem build_system(const RunConfig& cfg) {
    BuiltSystem out;
    switch (cfg.system.kind) {
    case SystemConfig::Kind::gauss:
        out.sys = gauss_system(1, cfg.system.n_max);
        out.gauss_analytic = true;
        out.gauss_n_max = cfg.system.n_max;
        out.diag_points = {Vec::Zero(1)};
        break;
    case SystemConfig::Kind::gauss_subset: {
        auto full = gauss_system(1, cfg.system.alphabet.back());
        out.sys = full;
        out.sys.branches.clear();
        for (const auto& b : full.branches) {
            // the branch for digit n maps 0 to 1/n
            double image = apply(b.map, BoundaryPoint::at1(0.0)).v[0];
            int n = static_cast<int>(std::lround(1.0 / image));
            for (int a : cfg.system.alphabet)
                if (a == n) { out.sys.branches.push_back(b); break; }
        }
        out.diag_points = {Vec::Zero(1)};
        break;
    }
    case SystemConfig::Kind::even_cf:
        out.sys = even_cf_system(cfg.system.sup_floor);
        out.diag_points = {Vec::Zero(1), Vec::Constant(1, 1.0)};
        break;
    case SystemConfig::Kind::group: {
        out.group = load_group(resolve_path(cfg.system.group_file, cfg.origin));
        out.has_group = true;
        const CodingParams& cp = cfg.system.coding;
        double floor = cfg.system.height_floor;
        if (floor < 0.0) floor = h_schedule(cp.max_generation) / cp.eta / 2.0;
        auto pts = parabolic_points(out.group, cfg.system.parabolic_depth, floor);
        out.coding = run_coding(out.group, cp, pts);
        out.has_coding = true;
        out.sys = out.coding.state.system;
        if (cfg.system.induce_cap > 0) {
            auto ind = induce_first_return(out.sys, cfg.system.induce_cap, cp.delta_hint,
                                           cp.truncation_floor);
            out.sys = ind.system;
            out.induced_truncated_mass = ind.truncated_mass;
        }
        // probe points: the deepest populated flower generation
        int deepest = 0;
        for (const auto& f : out.coding.state.flowers)
            deepest = std::max(deepest, f.generation);
        for (const auto& f : out.coding.state.flowers)
            if (f.generation == deepest) out.diag_points.push_back(f.point.p.v);
        break;
    }
    }
    if (out.sys.branches.empty())
        throw truncation_error("the configured system has no branches");
    return out;
}

Discretization discretize_built(const BuiltSystem& built, const RunConfig& cfg) {
    if (built.gauss_analytic) return discretize_gauss(built.gauss_n_max, cfg.disc);
    return discretize(built.sys, cfg.disc);
}

struct Sink {
    fs::path dir;
    bool verbose = false;
    std::vector<std::string> written;

    void write(const std::string& name, const std::string& content) {
        fs::create_directories(dir);
        std::string path = (dir / name).string();
        write_file_atomic(path, content);
        written.push_back(path);
        if (verbose) std::cerr << "wrote " << path << "\n";
    }
};

JValue series_json(const std::vector<double>& v) {
    JValue a = JValue::array();
    for (double x : v) a.push_back(x);
    return a;
}

void cmd_code_build(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    auto contraction = contraction_distortion_report(built.sys);
    JValue j = JValue::object();
    j["branch_count"] = built.sys.branches.size();
    j["lambda_max"] = contraction.lambda_max;
    j["c1_max"] = contraction.c1_max;
    if (built.has_coding) {
        j["generations"] = built.coding.state.generation;
        j["flower_count"] = built.coding.state.flowers.size();
        j["residual_series"] = series_json(built.coding.state.residual_series);
        j["residual_slope"] = built.coding.slope;
        j["residual_intercept"] = built.coding.intercept;
        if (cfg.system.induce_cap > 0)
            j["induced_truncated_mass"] = built.induced_truncated_mass;
        sink.write("coding_state.txt",
                   coding_to_string(built.coding.state, cfg.system.coding));
    }
    sink.write("code_build.json", j.dump() + "\n");
}

void cmd_delta_estimate(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    auto disc = discretize_built(built, cfg);
    auto est = estimate_delta_detailed(disc, cfg.bracket);
    JValue j = JValue::object();
    j["delta_estimate"] = est.delta;
    j["bracket"] = est.bracket;
    j["floor_sensitivity"] = est.floor_sensitivity;
    j["truncated_mass"] = disc.truncated_mass;
    j["nodes"] = disc.nodes.size();
    j["branch_count"] = disc.sys.branches.size();
    sink.write("delta_estimate.json", j.dump() + "\n");
}

void cmd_tail_report(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    auto rep = tail_report(built.sys, cfg.tail_delta, cfg.tail_epsilon);
    std::string csv = "count,partial_sum\n";
    for (std::size_t i = 0; i < rep.partial_sums.size(); ++i) {
        long long count = 1LL << i;
        if (count > static_cast<long long>(built.sys.branches.size()))
            count = static_cast<long long>(built.sys.branches.size());
        csv += std::to_string(count) + "," + format_double17(rep.partial_sums[i]) + "\n";
    }
    sink.write("tail_series.csv", csv);
    JValue j = JValue::object();
    j["delta"] = cfg.tail_delta;
    j["epsilon"] = cfg.tail_epsilon;
    j["extrapolated_total"] = rep.extrapolated_total;
    j["last_increment"] = rep.last_increment;
    j["points"] = rep.partial_sums.size();
    sink.write("tail_report.json", j.dump() + "\n");
}

void cmd_uni_check(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    auto cert = uni_search(built.sys, cfg.uni_n0);
    JValue j = JValue::object();
    j["ok"] = cert.ok;
    j["n0"] = cert.n0;
    j["epsilon0"] = cert.epsilon0;
    j["radius"] = cert.radius;
    j["c2_bound"] = cert.c2_bound;
    j["dtau_max"] = cert.dtau_max;
    j["pair_count"] = cert.pairs.size();
    sink.write("uni_check.json", j.dump() + "\n");
}

void cmd_spectral_scan(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    if (cfg.scan_sigma.count == 0 || cfg.scan_b.count == 0)
        throw validation_error("spectral-scan needs spectral.scan_sigma and spectral.scan_b");
    auto disc = discretize_built(built, cfg);
    double delta = estimate_delta(disc, cfg.bracket);
    auto scan = resonance_scan(disc, delta, cfg.scan_sigma.values(), cfg.scan_b.values());
    sink.write("spectral_scan.csv", scan_to_csv(scan));
    JValue j = JValue::object();
    j["delta"] = delta;
    j["zero_free_strip"] = scan.zero_free_strip;
    j["flagged_count"] = scan.flagged.size();
    j["grid_points"] = scan.field.size();
    j["heuristic"] = scan.heuristic;
    sink.write("spectral_scan.json", j.dump() + "\n");
}

void cmd_l2_probe(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    auto disc = discretize_built(built, cfg);
    auto rep = spectral_report(disc, estimate_delta(disc, cfg.bracket));
    auto probe = l2_contraction_probe(disc, rep, std::complex<double>(0.0, cfg.l2_b),
                                      cfg.l2_m_max);
    std::string csv = "m,l2\n";
    for (std::size_t m = 0; m < probe.series.size(); ++m)
        csv += std::to_string(m + 1) + "," + format_double17(probe.series[m]) + "\n";
    sink.write("l2_series.csv", csv);
    JValue j = JValue::object();
    j["delta"] = rep.delta;
    j["b"] = cfg.l2_b;
    j["beta"] = probe.beta;
    j["norm_proxy_max"] = probe.norm_proxy_max;
    j["m_max"] = cfg.l2_m_max;
    sink.write("l2_probe.json", j.dump() + "\n");
}

void cmd_mix_estimate(const RunConfig& cfg, const BuiltSystem& built, Sink& sink,
                      const RunOptions& opt) {
    if (cfg.times.empty())
        throw validation_error("mix-estimate needs flow.times");
    auto disc = discretize_built(built, cfg);
    auto rep = spectral_report(disc, estimate_delta(disc, cfg.bracket));
    auto flow = make_flow_system(disc, rep);
    Observable coord = [](const PhasePoint& p) { return p.x.v[0]; };
    std::uint64_t seed = opt.seed.value_or(cfg.seed);
    int threads = opt.threads.value_or(cfg.threads);
    auto corr = correlation(flow, coord, coord, cfg.times, cfg.samples, seed, threads);
    sink.write("correlation.csv", correlation_to_csv(corr));
    sink.write("mix_estimate.json", correlation_summary_json(corr) + "\n");
}

void cmd_orbit_count(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    if (!built.has_group)
        throw validation_error("orbit-count needs a system of kind group");
    if (cfg.radii.empty())
        throw validation_error("orbit-count needs orbit.radii");
    auto o = HalfSpacePoint::origin(built.group.d);
    auto res = orbit_count(built.group, cfg.radii, o, o);
    JValue j = JValue::object();
    j["radii"] = series_json(res.radii);
    JValue counts = JValue::array();
    for (long long c : res.counts) counts.push_back(c);
    j["counts"] = std::move(counts);
    j["slope"] = res.slope;
    j["intercept"] = res.intercept;
    j["expanded"] = res.expanded;
    sink.write("orbit_count.json", j.dump() + "\n");
}

void cmd_measure_diag(const RunConfig& cfg, const BuiltSystem& built, Sink& sink) {
    auto disc = discretize_built(built, cfg);
    auto rep = spectral_report(disc, estimate_delta(disc, cfg.bracket));
    const auto& pts = cfg.diag_points.empty() ? built.diag_points : cfg.diag_points;
    auto diag = measure_diagnostics(disc, rep, pts);
    JValue j = JValue::object();
    j["delta"] = rep.delta;
    j["lambda"] = rep.lambda;
    j["gap"] = rep.gap;
    j["doubling_max"] = diag.doubling_max;
    j["cusp_slope"] = diag.cusp_slope;
    j["cusp_slopes"] = series_json(diag.cusp_slopes);
    j["boundary_ratio_sup"] = diag.boundary_ratio_sup;
    j["resolution_warning"] = diag.resolution_warning;
    sink.write("measure_diag.json", j.dump() + "\n");
}

void emit_status(const std::string& command, const Sink& sink) {
    JValue j = JValue::object();
    j["status"] = "ok";
    j["command"] = command;
    JValue outs = JValue::array();
    for (const auto& p : sink.written) outs.push_back(p);
    j["outputs"] = std::move(outs);
    std::cout << j.dump(0) << "\n";
}

int emit_error(const std::string& cls, const std::string& msg) {
    JValue j = JValue::object();
    j["status"] = "error";
    j["error_class"] = cls;
    j["message"] = msg;
    std::cout << j.dump(0) << "\n";
    std::cerr << "error (" << cls << "): " << msg << "\n";
    return cls == "validation" ? 2 : 3;
}

} // namespace

int run_command(const std::string& command, const RunConfig& cfg, const RunOptions& opt) {
    try {
        bool known = false;
        for (const char* c : kCommands)
            if (command == c) { known = true; break; }
        if (!known) throw validation_error("unknown command '" + command + "'");

        Sink sink;
        sink.dir = opt.out_override.empty() ? cfg.output_dir : opt.out_override;
        sink.verbose = opt.verbose;
        auto built = build_system(cfg);

        if (command == "code-build") cmd_code_build(cfg, built, sink);
        else if (command == "delta-estimate") cmd_delta_estimate(cfg, built, sink);
        else if (command == "tail-report") cmd_tail_report(cfg, built, sink);
        else if (command == "uni-check") cmd_uni_check(cfg, built, sink);
        else if (command == "spectral-scan") cmd_spectral_scan(cfg, built, sink);
        else if (command == "l2-probe") cmd_l2_probe(cfg, built, sink);
        else if (command == "mix-estimate") cmd_mix_estimate(cfg, built, sink, opt);
        else if (command == "orbit-count") cmd_orbit_count(cfg, built, sink);
        else if (command == "measure-diag") cmd_measure_diag(cfg, built, sink);

        emit_status(command, sink);
        return 0;
    } catch (const Error& e) {
        return emit_error(e.error_class(), e.what());
    } catch (const std::exception& e) {
        return emit_error("internal", e.what());
    }
}

int run_command_file(const std::string& command, const std::string& config_path,
                     const RunOptions& opt) {
    RunConfig cfg;
    try {
        cfg = load_config(config_path);
    } catch (const Error& e) {
        return emit_error(e.error_class(), e.what());
    } catch (const std::exception& e) {
        return emit_error("validation", e.what());
    }
    return run_command(command, cfg, opt);
}

} // namespace cuspflow
