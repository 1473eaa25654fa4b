#include "cuspflow/runconfig.hpp"

#include <json.hpp>

#include "cuspflow/errors.hpp"
#include "cuspflow/report.hpp"

namespace cuspflow {

namespace {

using nlohmann::json;

// Diagnostics carry the line of the offending key so a failing config can be
// fixed without grepping. Keys are located by their first occurrence in the
// raw text, which is exact for the flat schema used here.
struct Ctx {
    const std::string* text;
    std::string origin;

    std::string anchor(const std::string& key) const {
        std::string needle = "\"" + key + "\"";
        auto pos = text->find(needle);
        if (pos == std::string::npos) return origin;
        int line = 1;
        for (std::size_t i = 0; i < pos; ++i)
            if ((*text)[i] == '\n') ++line;
        return origin + ":" + std::to_string(line);
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw validation_error(anchor(key) + ": " + key + ": " + msg);
    }
};

int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

void check_keys(const Ctx& ctx, const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok)
            throw validation_error(ctx.anchor(it.key()) + ": unknown key '" + it.key() +
                                   "' in " + where);
    }
}

double get_num(const Ctx& ctx, const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) ctx.fail(key, "expected a number");
    return obj[key].get<double>();
}

long long get_int(const Ctx& ctx, const json& obj, const std::string& key, long long fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer()) ctx.fail(key, "expected an integer");
    return obj[key].get<long long>();
}

std::string get_str(const Ctx& ctx, const json& obj, const std::string& key,
                    const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string()) ctx.fail(key, "expected a string");
    return obj[key].get<std::string>();
}

std::vector<double> get_num_list(const Ctx& ctx, const json& obj, const std::string& key,
                                 std::vector<double> fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_array()) ctx.fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& v : obj[key]) {
        if (!v.is_number()) ctx.fail(key, "expected an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

void require_increasing(const Ctx& ctx, const std::vector<double>& v, const std::string& key) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1]) ctx.fail(key, "must be strictly increasing");
}

ScanGrid get_grid(const Ctx& ctx, const json& obj, const std::string& key, ScanGrid fallback) {
    if (!obj.contains(key)) return fallback;
    const json& g = obj[key];
    if (!g.is_object()) ctx.fail(key, "expected an object {lo, hi, count}");
    check_keys(ctx, g, key, {"lo", "hi", "count"});
    ScanGrid out;
    out.lo = get_num(ctx, g, "lo", 0.0);
    out.hi = get_num(ctx, g, "hi", 0.0);
    out.count = static_cast<int>(get_int(ctx, g, "count", 0));
    if (out.count < 1) ctx.fail(key, "count must be >= 1");
    if (!(out.lo <= out.hi)) ctx.fail(key, "lo must be <= hi");
    if (out.count > 1 && out.lo == out.hi) ctx.fail(key, "lo = hi needs count = 1");
    return out;
}

void parse_system(const Ctx& ctx, const json& j, SystemConfig& sys) {
    if (!j.is_object()) ctx.fail("system", "expected an object");
    std::string kind = get_str(ctx, j, "kind", "");
    if (kind == "gauss") {
        sys.kind = SystemConfig::Kind::gauss;
        check_keys(ctx, j, "system", {"kind", "n_max"});
        sys.n_max = static_cast<int>(get_int(ctx, j, "n_max", 200));
        if (sys.n_max < 1 || sys.n_max > 100000) ctx.fail("n_max", "must be in [1, 100000]");
    } else if (kind == "gauss_subset") {
        sys.kind = SystemConfig::Kind::gauss_subset;
        check_keys(ctx, j, "system", {"kind", "alphabet"});
        if (!j.contains("alphabet")) ctx.fail("alphabet", "required for kind gauss_subset");
        auto a = get_num_list(ctx, j, "alphabet", {});
        if (a.empty()) ctx.fail("alphabet", "must be nonempty");
        for (double v : a) {
            if (v < 1.0 || v != static_cast<double>(static_cast<int>(v)))
                ctx.fail("alphabet", "entries must be integers >= 1");
            sys.alphabet.push_back(static_cast<int>(v));
        }
        require_increasing(ctx, a, "alphabet");
    } else if (kind == "even_cf") {
        sys.kind = SystemConfig::Kind::even_cf;
        check_keys(ctx, j, "system", {"kind", "sup_floor"});
        sys.sup_floor = get_num(ctx, j, "sup_floor", 1e-5);
        if (!(sys.sup_floor > 0.0 && sys.sup_floor < 0.25))
            ctx.fail("sup_floor", "must be in (0, 0.25)");
    } else if (kind == "group") {
        sys.kind = SystemConfig::Kind::group;
        check_keys(ctx, j, "system",
                   {"kind", "group_file", "coding", "parabolic_depth", "height_floor",
                    "induce_cap"});
        sys.group_file = get_str(ctx, j, "group_file", "");
        if (sys.group_file.empty()) ctx.fail("group_file", "required for kind group");
        if (j.contains("coding")) {
            const json& c = j["coding"];
            if (!c.is_object()) ctx.fail("coding", "expected an object");
            check_keys(ctx, c, "system.coding",
                       {"eta", "max_generation", "truncation_floor", "delta_hint",
                        "boundary_samples", "cell_cap"});
            sys.coding.eta = get_num(ctx, c, "eta", sys.coding.eta);
            if (!(sys.coding.eta > 0.0 && sys.coding.eta < 1.0))
                ctx.fail("eta", "must be in (0, 1)");
            sys.coding.max_generation =
                static_cast<int>(get_int(ctx, c, "max_generation", sys.coding.max_generation));
            if (sys.coding.max_generation < 1 || sys.coding.max_generation > 40)
                ctx.fail("max_generation", "must be in [1, 40]");
            sys.coding.truncation_floor =
                get_num(ctx, c, "truncation_floor", sys.coding.truncation_floor);
            if (!(sys.coding.truncation_floor >= 0.0))
                ctx.fail("truncation_floor", "must be >= 0");
            sys.coding.delta_hint = get_num(ctx, c, "delta_hint", sys.coding.delta_hint);
            if (!(sys.coding.delta_hint > 0.0 && sys.coding.delta_hint <= 2.0))
                ctx.fail("delta_hint", "must be in (0, 2]");
            sys.coding.boundary_samples = static_cast<int>(
                get_int(ctx, c, "boundary_samples", sys.coding.boundary_samples));
            if (sys.coding.boundary_samples < 16)
                ctx.fail("boundary_samples", "must be >= 16");
            sys.coding.cell_cap = get_int(ctx, c, "cell_cap", sys.coding.cell_cap);
            if (sys.coding.cell_cap < 1) ctx.fail("cell_cap", "must be >= 1");
        }
        sys.parabolic_depth =
            static_cast<int>(get_int(ctx, j, "parabolic_depth", sys.parabolic_depth));
        if (sys.parabolic_depth < 1 || sys.parabolic_depth > 64)
            ctx.fail("parabolic_depth", "must be in [1, 64]");
        sys.height_floor = get_num(ctx, j, "height_floor", sys.height_floor);
        sys.induce_cap = static_cast<int>(get_int(ctx, j, "induce_cap", sys.induce_cap));
        if (sys.induce_cap < 0 || sys.induce_cap > 200)
            ctx.fail("induce_cap", "must be in [0, 200]");
    } else {
        ctx.fail("kind", "must be one of gauss, gauss_subset, even_cf, group");
    }
}

} // namespace

std::vector<double> ScanGrid::values() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(count));
    if (count == 1) {
        out.push_back(lo);
        return out;
    }
    for (int i = 0; i < count; ++i)
        out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return out;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    Ctx ctx{&text, origin};
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw validation_error(origin + ":" + std::to_string(line_of_byte(text, e.byte)) +
                               ": parse error: " + e.what());
    }
    if (!j.is_object()) throw validation_error(origin + ": expected a top-level object");
    check_keys(ctx, j, "config",
               {"system", "discretization", "spectral", "flow", "orbit", "diag_points",
                "output_dir"});

    RunConfig cfg;
    cfg.origin = origin;
    if (!j.contains("system")) throw validation_error(origin + ": 'system' section required");
    parse_system(ctx, j["system"], cfg.system);

    if (j.contains("discretization")) {
        const json& d = j["discretization"];
        if (!d.is_object()) ctx.fail("discretization", "expected an object");
        check_keys(ctx, d, "discretization",
                   {"nodes", "truncation_floor", "delta_hint", "graded"});
        cfg.disc.nodes = static_cast<int>(get_int(ctx, d, "nodes", cfg.disc.nodes));
        if (cfg.disc.nodes < 8 || cfg.disc.nodes > 20000)
            ctx.fail("nodes", "must be in [8, 20000]");
        cfg.disc.truncation_floor =
            get_num(ctx, d, "truncation_floor", cfg.disc.truncation_floor);
        if (!(cfg.disc.truncation_floor >= 0.0)) ctx.fail("truncation_floor", "must be >= 0");
        cfg.disc.delta_hint = get_num(ctx, d, "delta_hint", cfg.disc.delta_hint);
        if (!(cfg.disc.delta_hint > 0.0 && cfg.disc.delta_hint <= 2.0))
            ctx.fail("delta_hint", "must be in (0, 2]");
        if (d.contains("graded")) {
            if (!d["graded"].is_boolean()) ctx.fail("graded", "expected a boolean");
            cfg.disc.graded = d["graded"].get<bool>();
        }
    }

    if (j.contains("spectral")) {
        const json& s = j["spectral"];
        if (!s.is_object()) ctx.fail("spectral", "expected an object");
        check_keys(ctx, s, "spectral",
                   {"a_lo", "a_hi", "tol", "scan_sigma", "scan_b", "l2_b", "l2_m_max",
                    "tail_delta", "tail_epsilon", "uni_n0"});
        cfg.bracket.a_lo = get_num(ctx, s, "a_lo", cfg.bracket.a_lo);
        cfg.bracket.a_hi = get_num(ctx, s, "a_hi", cfg.bracket.a_hi);
        if (!(cfg.bracket.a_lo < cfg.bracket.a_hi)) ctx.fail("a_lo", "requires a_lo < a_hi");
        cfg.bracket.tol = get_num(ctx, s, "tol", cfg.bracket.tol);
        if (!(cfg.bracket.tol > 0.0)) ctx.fail("tol", "must be > 0");
        cfg.scan_sigma = get_grid(ctx, s, "scan_sigma", cfg.scan_sigma);
        cfg.scan_b = get_grid(ctx, s, "scan_b", cfg.scan_b);
        cfg.l2_b = get_num(ctx, s, "l2_b", cfg.l2_b);
        cfg.l2_m_max = static_cast<int>(get_int(ctx, s, "l2_m_max", cfg.l2_m_max));
        if (cfg.l2_m_max < 5 || cfg.l2_m_max > 10000)
            ctx.fail("l2_m_max", "must be in [5, 10000]");
        cfg.tail_delta = get_num(ctx, s, "tail_delta", cfg.tail_delta);
        if (!(cfg.tail_delta > 0.0)) ctx.fail("tail_delta", "must be > 0");
        cfg.tail_epsilon = get_num(ctx, s, "tail_epsilon", cfg.tail_epsilon);
        if (!(cfg.tail_epsilon > 0.0 && cfg.tail_epsilon < 1.0))
            ctx.fail("tail_epsilon", "must be in (0, 1)");
        cfg.uni_n0 = static_cast<int>(get_int(ctx, s, "uni_n0", cfg.uni_n0));
        if (cfg.uni_n0 < 1 || cfg.uni_n0 > 20) ctx.fail("uni_n0", "must be in [1, 20]");
    }

    if (j.contains("flow")) {
        const json& f = j["flow"];
        if (!f.is_object()) ctx.fail("flow", "expected an object");
        check_keys(ctx, f, "flow", {"samples", "times", "seed", "threads"});
        cfg.samples = get_int(ctx, f, "samples", cfg.samples);
        if (cfg.samples < 20 || cfg.samples > 100000000)
            ctx.fail("samples", "must be in [20, 1e8]");
        cfg.times = get_num_list(ctx, f, "times", cfg.times);
        if (!cfg.times.empty()) {
            if (cfg.times.front() < 0.0) ctx.fail("times", "must be nonnegative");
            require_increasing(ctx, cfg.times, "times");
        }
        long long seed = get_int(ctx, f, "seed", static_cast<long long>(cfg.seed));
        if (seed < 0) ctx.fail("seed", "must be >= 0");
        cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.threads = static_cast<int>(get_int(ctx, f, "threads", cfg.threads));
        if (cfg.threads < 0 || cfg.threads > 1024) ctx.fail("threads", "must be in [0, 1024]");
    }

    if (j.contains("orbit")) {
        const json& o = j["orbit"];
        if (!o.is_object()) ctx.fail("orbit", "expected an object");
        check_keys(ctx, o, "orbit", {"radii"});
        cfg.radii = get_num_list(ctx, o, "radii", cfg.radii);
        if (cfg.radii.size() < 2) ctx.fail("radii", "need at least two radii");
        if (cfg.radii.front() <= 0.0) ctx.fail("radii", "must be positive");
        require_increasing(ctx, cfg.radii, "radii");
    }

    if (j.contains("diag_points")) {
        const json& dp = j["diag_points"];
        if (!dp.is_array()) ctx.fail("diag_points", "expected an array of points");
        for (const auto& pt : dp) {
            if (!pt.is_array() || pt.empty())
                ctx.fail("diag_points", "each point is a nonempty array of coordinates");
            Vec v(pt.size());
            for (std::size_t i = 0; i < pt.size(); ++i) {
                if (!pt[i].is_number()) ctx.fail("diag_points", "coordinates must be numbers");
                v[static_cast<int>(i)] = pt[i].get<double>();
            }
            if (!cfg.diag_points.empty() && cfg.diag_points.front().size() != v.size())
                ctx.fail("diag_points", "points must share one dimension");
            cfg.diag_points.push_back(std::move(v));
        }
    }

    cfg.output_dir = get_str(ctx, j, "output_dir", cfg.output_dir);
    if (cfg.output_dir.empty()) ctx.fail("output_dir", "must be nonempty");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    return parse_config(read_file(path), path);
}

ConfigDiagnostics validate_config(const std::string& path) {
    ConfigDiagnostics diag;
    try {
        (void)load_config(path);
        diag.ok = true;
    } catch (const Error& e) {
        diag.messages.push_back(e.what());
    } catch (const std::exception& e) {
        diag.messages.push_back(std::string(e.what()));
    }
    return diag;
}

} // namespace cuspflow
