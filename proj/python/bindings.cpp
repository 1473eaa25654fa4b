#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cuspflow/commands.hpp"
#include "cuspflow/flow.hpp"
#include "cuspflow/runconfig.hpp"
#include "cuspflow/spectral.hpp"

namespace py = pybind11;
using namespace cuspflow;

PYBIND11_MODULE(_core, m) {
    m.doc() = "expanding-map discretization, spectral estimates, and the suspension flow";

    py::class_<BranchSystem>(m, "BranchSystem")
        .def_readonly("d", &BranchSystem::d)
        .def_property_readonly("branch_count",
                               [](const BranchSystem& s) { return s.branches.size(); })
        .def("__repr__", [](const BranchSystem& s) {
            return "<BranchSystem d=" + std::to_string(s.d) + " branches=" +
                   std::to_string(s.branches.size()) + ">";
        });

    m.def("gauss_system", &gauss_system, py::arg("n_min"), py::arg("n_max"));
    m.def("even_cf_system", &even_cf_system, py::arg("sup_floor") = 1e-5);

    py::class_<DiscretizationParams>(m, "DiscretizationParams")
        .def(py::init<>())
        .def_readwrite("nodes", &DiscretizationParams::nodes)
        .def_readwrite("truncation_floor", &DiscretizationParams::truncation_floor)
        .def_readwrite("delta_hint", &DiscretizationParams::delta_hint)
        .def_readwrite("graded", &DiscretizationParams::graded);

    py::class_<Discretization>(m, "Discretization")
        .def_property_readonly("node_count",
                               [](const Discretization& d) { return d.nodes.size(); })
        .def_readonly("truncated_mass", &Discretization::truncated_mass)
        .def_readonly("mesh", &Discretization::mesh);

    m.def("discretize", &discretize, py::arg("system"), py::arg("params"));
    m.def("discretize_gauss", &discretize_gauss, py::arg("n_max"), py::arg("params"));

    py::class_<DeltaOptions>(m, "DeltaOptions")
        .def(py::init<>())
        .def_readwrite("a_lo", &DeltaOptions::a_lo)
        .def_readwrite("a_hi", &DeltaOptions::a_hi)
        .def_readwrite("tol", &DeltaOptions::tol);

    py::class_<DeltaEstimate>(m, "DeltaEstimate")
        .def_readonly("delta", &DeltaEstimate::delta)
        .def_readonly("bracket", &DeltaEstimate::bracket)
        .def_readonly("floor_sensitivity", &DeltaEstimate::floor_sensitivity);

    m.def("estimate_delta", &estimate_delta, py::arg("disc"),
          py::arg("options") = DeltaOptions{});
    m.def("estimate_delta_detailed", &estimate_delta_detailed, py::arg("disc"),
          py::arg("options") = DeltaOptions{});
    m.def("lambda_at", &lambda_at, py::arg("disc"), py::arg("a"));

    py::class_<SpectralReport>(m, "SpectralReport")
        .def_readonly("delta", &SpectralReport::delta)
        .def_property_readonly("lambda_", [](const SpectralReport& r) { return r.lambda; })
        .def_readonly("gap", &SpectralReport::gap)
        .def_readonly("f", &SpectralReport::f)
        .def_readonly("mass", &SpectralReport::mass);

    m.def(
        "spectral_report",
        [](const Discretization& disc, std::optional<double> delta) {
            return spectral_report(disc, delta);
        },
        py::arg("disc"), py::arg("delta") = std::nullopt);

    py::class_<TailReport>(m, "TailReport")
        .def_readonly("partial_sums", &TailReport::partial_sums)
        .def_readonly("last_increment", &TailReport::last_increment)
        .def_readonly("extrapolated_total", &TailReport::extrapolated_total);

    m.def("tail_report", &tail_report, py::arg("system"), py::arg("delta"),
          py::arg("epsilon"));

    py::class_<UniCertificate>(m, "UniCertificate")
        .def_readonly("ok", &UniCertificate::ok)
        .def_readonly("n0", &UniCertificate::n0)
        .def_readonly("epsilon0", &UniCertificate::epsilon0)
        .def_readonly("radius", &UniCertificate::radius)
        .def_readonly("c2_bound", &UniCertificate::c2_bound)
        .def_readonly("dtau_max", &UniCertificate::dtau_max);

    m.def(
        "uni_search",
        [](const BranchSystem& sys, int n0) { return uni_search(sys, n0); },
        py::arg("system"), py::arg("n0") = 1);

    py::class_<L2Probe>(m, "L2Probe")
        .def_readonly("series", &L2Probe::series)
        .def_readonly("beta", &L2Probe::beta)
        .def_readonly("norm_proxy_max", &L2Probe::norm_proxy_max);

    m.def(
        "l2_contraction_probe",
        [](const Discretization& disc, const SpectralReport& rep, std::complex<double> s,
           int m_max) { return l2_contraction_probe(disc, rep, s, m_max); },
        py::arg("disc"), py::arg("report"), py::arg("s"), py::arg("m_max"));

    py::class_<ResonancePoint>(m, "ResonancePoint")
        .def_readonly("sigma", &ResonancePoint::sigma)
        .def_readonly("b", &ResonancePoint::b)
        .def_readonly("min_sv", &ResonancePoint::min_sv)
        .def_readonly("radius", &ResonancePoint::radius);

    py::class_<ResonanceScan>(m, "ResonanceScan")
        .def_readonly("field", &ResonanceScan::field)
        .def_readonly("flagged", &ResonanceScan::flagged)
        .def_readonly("zero_free_strip", &ResonanceScan::zero_free_strip)
        .def_readonly("heuristic", &ResonanceScan::heuristic);

    m.def("resonance_scan", &resonance_scan, py::arg("disc"), py::arg("delta"),
          py::arg("sigmas"), py::arg("bs"));

    py::class_<FlowSystem>(m, "FlowSystem")
        .def_readonly("roof_bound", &FlowSystem::roof_bound)
        .def_readonly("lambda_max", &FlowSystem::lambda_max)
        .def_readonly("r_bar", &FlowSystem::r_bar);

    m.def("make_flow_system", &make_flow_system, py::arg("disc"), py::arg("report"));

    py::class_<CorrelationSeries>(m, "CorrelationSeries")
        .def_readonly("times", &CorrelationSeries::times)
        .def_readonly("rho", &CorrelationSeries::rho)
        .def_readonly("stderrs", &CorrelationSeries::stderrs)
        .def_readonly("fitted_eta", &CorrelationSeries::fitted_eta)
        .def_readonly("fit_quality", &CorrelationSeries::fit_quality)
        .def_readonly("sample_count", &CorrelationSeries::sample_count)
        .def_readonly("escape_rate", &CorrelationSeries::escape_rate)
        .def_readonly("window", &CorrelationSeries::window)
        .def_readonly("degenerate", &CorrelationSeries::degenerate);

    // coordinate autocorrelation, the same observable mix-estimate uses; plain
    // C++ closures so the worker threads never touch the interpreter
    m.def(
        "coordinate_correlation",
        [](const FlowSystem& flow, const std::vector<double>& times, long long n_samples,
           std::uint64_t seed, int threads) {
            Observable coord = [](const PhasePoint& p) { return p.x.v[0]; };
            py::gil_scoped_release release;
            return correlation(flow, coord, coord, times, n_samples, seed, threads);
        },
        py::arg("flow"), py::arg("times"), py::arg("n_samples"), py::arg("seed") = 1,
        py::arg("threads") = 0);

    m.def(
        "validate_config",
        [](const std::string& path) {
            auto diag = validate_config(path);
            return py::make_tuple(diag.ok, diag.messages);
        },
        py::arg("path"));

    m.def(
        "run_command",
        [](const std::string& command, const std::string& config_path,
           const std::string& out_dir) {
            RunOptions opt;
            opt.out_override = out_dir;
            return run_command_file(command, config_path, opt);
        },
        py::arg("command"), py::arg("config_path"), py::arg("out_dir") = "");
}
