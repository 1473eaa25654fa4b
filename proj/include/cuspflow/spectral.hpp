#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cuspflow/coding.hpp"

namespace cuspflow {

struct DiscretizationParams {
    int nodes = 2000;
    double truncation_floor = 1e-8;
    double delta_hint = 0.5;
    bool graded = true; // d=1: cluster nodes toward the box faces
};

// Closed-form remainder of an infinite branch family: weight(a, x) is the sum
// of |gamma'(x)|^a over the dropped branches, all mapping x near `point`.
struct TailWeight {
    std::function<std::complex<double>(std::complex<double> a, const Vec& x)> weight;
    Vec point;
    int order = 0; // multiplies the order-th derivative of the function at point (d=1, <= 1)
};

// Collocation discretization of a single-domain branch system: piecewise
// linear in d=1, nearest grid node in d>=2.
struct Discretization {
    BranchSystem sys; // kept branches only
    std::vector<Vec> nodes;
    std::vector<double> sup_derivs; // per kept branch
    std::vector<TailWeight> tails;
    double truncated_mass = 0;      // sum over dropped branches of sup^delta_hint
    double mesh = 0;                // largest node spacing
    std::vector<int> grid_dims;     // d>=2 node lattice shape
    double delta_hint = 0.5;
};

Discretization discretize(const BranchSystem& sys, const DiscretizationParams& par);

// continued-fraction branches n = 1..n_max plus the analytic Hurwitz tail for n > n_max
Discretization discretize_gauss(int n_max, const DiscretizationParams& par);

// Hurwitz zeta sum_{k>=0} (q+k)^{-s} by Euler-Maclaurin; accurate for large q
std::complex<double> hurwitz_zeta(std::complex<double> s, double q);

struct OperatorMatrix {
    std::complex<double> s;
    double a_total = 0; // delta + Re(s)
    Eigen::MatrixXcd M;
};

OperatorMatrix assemble(const Discretization& disc, double delta, std::complex<double> s);

struct Spectrum {
    std::complex<double> lambda;
    Eigen::VectorXcd right, left;
    double gap = 0; // |second| / |leading|
    int iterations = 0;
};

Spectrum leading_spectrum(const OperatorMatrix& op, double tol = 1e-10, int max_iter = 100000);

// leading eigenvalue of the real-weight operator at exponent a
double lambda_at(const Discretization& disc, double a);

struct DeltaOptions {
    double a_lo = -0.25;
    double a_hi = 1.49;
    double tol = 1e-8;
};

double estimate_delta(const Discretization& disc, const DeltaOptions& opt = {});

struct DeltaEstimate {
    double delta = 0;
    double bracket = 0;           // final bracket width
    double floor_sensitivity = 0; // |shift| when the weakest kept branches are dropped
};

DeltaEstimate estimate_delta_detailed(const Discretization& disc, const DeltaOptions& opt = {});

// independent binned discretization used as a scheme cross-check
double estimate_delta_ulam(const BranchSystem& sys, int bins, double truncation_floor = 1e-8,
                           const DeltaOptions& opt = {});

struct SpectralReport {
    double delta = 0;
    double lambda = 0; // leading eigenvalue at a = delta (should be 1)
    double gap = 0;
    double b_norm_constant = 0; // filled in by l2_contraction_probe callers
    Eigen::VectorXd f;    // right eigenfunction, positive
    Eigen::VectorXd mass; // conformal-measure masses (left eigenvector), sum 1
};

SpectralReport spectral_report(const Discretization& disc,
                               std::optional<double> delta = std::nullopt);

struct MeasureDiagnostics {
    double doubling_max = 0;
    std::vector<double> cusp_slopes; // regression slope of log mass(B(p,r)) vs log r
    double cusp_slope = 0;           // median of the above
    double boundary_ratio_sup = 0;   // mass(N_{r/2}) / mass(N_r)
    bool resolution_warning = false;
};

MeasureDiagnostics measure_diagnostics(const Discretization& disc, const SpectralReport& rep,
                                       const std::vector<Vec>& cusp_points = {},
                                       int min_ball_nodes = 20);

struct L2Probe {
    std::vector<double> series; // int |L~^m v|^2 dmu_E, m = 1..m_max
    double beta = 0;            // fitted geometric rate
    double norm_proxy_max = 0;  // sup_m of the b-norm proxy of L~^m v
};

// v empty -> default observable x - mean (first coordinate), mu_E-normalized
L2Probe l2_contraction_probe(const Discretization& disc, const SpectralReport& rep,
                             std::complex<double> s, int m_max,
                             Eigen::VectorXcd v = Eigen::VectorXcd());

struct ResonancePoint {
    double sigma = 0, b = 0;
    double min_sv = 0; // minimum singular value of I - M(s)
    double radius = 0; // spectral radius of M(s)
};

struct ResonanceScan {
    std::vector<ResonancePoint> field;
    std::vector<int> flagged;    // indices where I - M(s) is near-singular
    double zero_free_strip = 0;  // empirical eta_num: no flags with Re s > -eta_num, b away from 0
    bool heuristic = true;       // never a certified resonance computation
};

ResonanceScan resonance_scan(const Discretization& disc, double delta,
                             const std::vector<double>& sigmas, const std::vector<double>& bs);

std::string scan_to_csv(const ResonanceScan& scan);

} // namespace cuspflow
