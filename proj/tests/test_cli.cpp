#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cuspflow/report.hpp"
#include "cuspflow/runconfig.hpp"

using namespace cuspflow;
namespace fs = std::filesystem;

namespace {

std::string cli_binary() {
    const char* p = std::getenv("CUSPFLOW_CLI");
    REQUIRE(p != nullptr);
    return p;
}

std::string config_dir() {
    const char* p = std::getenv("CUSPFLOW_CONFIG_DIR");
    REQUIRE(p != nullptr);
    return p;
}

struct CliResult {
    int status = -1;
    std::string out;
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
    std::string cmd = env + cli_binary() + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
    int rc = pclose(pipe);
    r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "cuspflow-cli-XXXXXX").string();
        path = mkdtemp(tmpl.data());
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string write_temp(const TempDir& dir, const std::string& name, const std::string& text) {
    std::string p = (dir.path / name).string();
    std::ofstream(p) << text;
    return p;
}

nlohmann::json read_json(const std::string& path) {
    return nlohmann::json::parse(read_file(path));
}

} // namespace

TEST_CASE("all shipped example configs validate") {
    int seen = 0;
    for (const char* name : {"gauss_full.json", "gauss_12.json", "gamma2.json",
                             "schottky2.json"}) {
        std::string p = (fs::path(config_dir()) / name).string();
        auto diag = validate_config(p);
        INFO(name, ": ", diag.messages.empty() ? "" : diag.messages.front());
        CHECK(diag.ok);
        ++seen;
    }
    CHECK(seen == 4);
}

TEST_CASE("config schema rejections") {
    TempDir dir;

    SUBCASE("empty file is a parse error with a location") {
        auto diag = validate_config(write_temp(dir, "empty.json", ""));
        REQUIRE(!diag.ok);
        CHECK(diag.messages.front().find("parse error") != std::string::npos);
        CHECK(diag.messages.front().find(":1:") != std::string::npos);
    }

    SUBCASE("unknown key is named with its line") {
        std::string cfg = "{\n  \"system\": {\"kind\": \"gauss\"},\n  \"wibble\": 3\n}\n";
        auto diag = validate_config(write_temp(dir, "unknown.json", cfg));
        REQUIRE(!diag.ok);
        CHECK(diag.messages.front().find("'wibble'") != std::string::npos);
        CHECK(diag.messages.front().find(":3:") != std::string::npos);
    }

    SUBCASE("eta out of range names the field") {
        std::string cfg = R"({"system": {"kind": "group", "group_file": "g.json",
            "coding": {"eta": 1.5}}})";
        auto diag = validate_config(write_temp(dir, "eta.json", cfg));
        REQUIRE(!diag.ok);
        CHECK(diag.messages.front().find("eta") != std::string::npos);
        CHECK(diag.messages.front().find("(0, 1)") != std::string::npos);
    }

    SUBCASE("times must be sorted") {
        std::string cfg = R"({"system": {"kind": "gauss"},
            "flow": {"times": [0.0, 1.0, 0.5]}})";
        auto diag = validate_config(write_temp(dir, "times.json", cfg));
        REQUIRE(!diag.ok);
        CHECK(diag.messages.front().find("times") != std::string::npos);
    }

    SUBCASE("missing file never partially loads") {
        auto diag = validate_config((dir.path / "absent.json").string());
        CHECK(!diag.ok);
        CHECK(!diag.messages.empty());
    }
}

TEST_CASE("parse_config defaults and grids") {
    auto cfg = parse_config(R"({"system": {"kind": "even_cf", "sup_floor": 1e-4}})");
    CHECK(cfg.system.kind == SystemConfig::Kind::even_cf);
    CHECK(cfg.system.sup_floor == 1e-4);
    CHECK(cfg.disc.nodes == 2000);
    CHECK(cfg.output_dir == "out");

    ScanGrid g{1.0, 3.0, 5};
    auto v = g.values();
    REQUIRE(v.size() == 5);
    CHECK(v.front() == 1.0);
    CHECK(v.back() == 3.0);
    CHECK(v[2] == doctest::Approx(2.0));
    ScanGrid single{-0.05, -0.05, 1};
    CHECK(single.values() == std::vector<double>{-0.05});
}

TEST_CASE("delta-estimate on the shipped full-alphabet config") {
    TempDir out;
    std::string cfg = (fs::path(config_dir()) / "gauss_full.json").string();
    auto r = run_cli("delta-estimate --config " + cfg + " --out " + out.str());
    REQUIRE(r.status == 0);
    auto status = nlohmann::json::parse(r.out);
    CHECK(status["status"] == "ok");
    auto rep = read_json((out.path / "delta_estimate.json").string());
    CHECK(std::abs(rep["delta_estimate"].get<double>() - 1.0) < 1e-3);

    // reruns are byte-identical
    std::string first = read_file((out.path / "delta_estimate.json").string());
    auto r2 = run_cli("delta-estimate --config " + cfg + " --out " + out.str());
    REQUIRE(r2.status == 0);
    CHECK(read_file((out.path / "delta_estimate.json").string()) == first);
}

TEST_CASE("unknown config key exits 2 naming the key") {
    TempDir dir;
    std::string p = write_temp(dir, "bad.json",
                               "{\n\"system\": {\"kind\": \"gauss\"},\n\"frobnicate\": 1\n}\n");
    auto r = run_cli("delta-estimate --config " + p);
    CHECK(r.status == 2);
    auto status = nlohmann::json::parse(r.out);
    CHECK(status["status"] == "error");
    CHECK(status["error_class"] == "validation");
    CHECK(status["message"].get<std::string>().find("frobnicate") != std::string::npos);
}

TEST_CASE("code-build then tail-report on the congruence config") {
    TempDir out;
    std::string cfg = (fs::path(config_dir()) / "gamma2.json").string();
    auto r1 = run_cli("code-build --config " + cfg + " --out " + out.str());
    REQUIRE(r1.status == 0);
    CHECK(fs::exists(out.path / "coding_state.txt"));
    auto build = read_json((out.path / "code_build.json").string());
    CHECK(build["branch_count"].get<int>() > 0);
    CHECK(build["residual_slope"].get<double>() < 0.0);

    auto r2 = run_cli("tail-report --config " + cfg + " --out " + out.str());
    REQUIRE(r2.status == 0);
    std::string series = read_file((out.path / "tail_series.csv").string());
    std::istringstream in(series);
    std::string line;
    std::getline(in, line);
    CHECK(line == "count,partial_sum");
    double prev = -1.0;
    int rows = 0;
    while (std::getline(in, line)) {
        double v = std::stod(line.substr(line.find(',') + 1));
        CHECK(v >= prev); // partial sums of positive terms are monotone
        prev = v;
        ++rows;
    }
    CHECK(rows >= 4);

    // golden determinism: a second run reproduces the series byte for byte
    TempDir out2;
    auto r3 = run_cli("tail-report --config " + cfg + " --out " + out2.str());
    REQUIRE(r3.status == 0);
    CHECK(read_file((out2.path / "tail_series.csv").string()) == series);
}

TEST_CASE("uni-check reports the closed-form pair bound") {
    TempDir out;
    std::string cfg = (fs::path(config_dir()) / "gauss_12.json").string();
    auto r = run_cli("uni-check --config " + cfg + " --out " + out.str());
    REQUIRE(r.status == 0);
    auto rep = read_json((out.path / "uni_check.json").string());
    CHECK(rep["ok"].get<bool>());
    CHECK(std::abs(rep["epsilon0"].get<double>() - 1.0 / 3.0) < 1e-6);
}

TEST_CASE("computation failure exits 3 with the error class") {
    TempDir dir;
    // bracket excludes the exponent of the two-branch system
    std::string p = write_temp(dir, "bad_bracket.json",
                               R"({"system": {"kind": "gauss_subset", "alphabet": [1, 2]},
        "discretization": {"nodes": 200},
        "spectral": {"a_lo": 1.2, "a_hi": 1.49}})");
    auto r = run_cli("delta-estimate --config " + p + " --out " + dir.str() + "/out");
    CHECK(r.status == 3);
    auto status = nlohmann::json::parse(r.out);
    CHECK(status["error_class"] == "bracket");
}

TEST_CASE("command line errors exit 2") {
    CHECK(run_cli("no-such-command --config x.json").status == 2);
    CHECK(run_cli("delta-estimate").status == 2);
}

TEST_CASE("output directory precedence: flag over environment over config") {
    TempDir dir;
    std::string cfg = write_temp(dir, "tiny.json",
                                 R"({"system": {"kind": "gauss_subset", "alphabet": [1, 2]},
        "discretization": {"nodes": 100},
        "spectral": {"a_lo": -0.25, "a_hi": 1.49},
        "output_dir": ")" + dir.str() + R"(/from_config"})");
    auto r1 = run_cli("delta-estimate --config " + cfg);
    REQUIRE(r1.status == 0);
    CHECK(fs::exists(dir.path / "from_config" / "delta_estimate.json"));

    auto r2 = run_cli("delta-estimate --config " + cfg,
                      "CUSPFLOW_OUT=" + dir.str() + "/from_env ");
    REQUIRE(r2.status == 0);
    CHECK(fs::exists(dir.path / "from_env" / "delta_estimate.json"));

    auto r3 = run_cli("delta-estimate --config " + cfg + " --out " + dir.str() + "/from_flag",
                      "CUSPFLOW_OUT=" + dir.str() + "/from_env2 ");
    REQUIRE(r3.status == 0);
    CHECK(fs::exists(dir.path / "from_flag" / "delta_estimate.json"));
    CHECK(!fs::exists(dir.path / "from_env2"));
}

TEST_CASE("mix-estimate respects the seed flag deterministically") {
    TempDir dir;
    std::string cfg = write_temp(dir, "flow.json",
                                 R"({"system": {"kind": "gauss", "n_max": 50},
        "discretization": {"nodes": 200},
        "spectral": {"a_lo": 0.55, "a_hi": 1.49},
        "flow": {"samples": 2000, "times": [0.0, 0.7, 1.4], "seed": 11}})");
    auto run_into = [&](const std::string& sub, const std::string& extra) {
        auto r = run_cli("mix-estimate --config " + cfg + " --out " + dir.str() + "/" + sub +
                         extra);
        REQUIRE(r.status == 0);
        return read_file((dir.path / sub / "correlation.csv").string());
    };
    std::string a = run_into("a", "");
    std::string b = run_into("b", "");
    std::string c = run_into("c", " --seed 12");
    CHECK(a == b);
    CHECK(a != c);
}
