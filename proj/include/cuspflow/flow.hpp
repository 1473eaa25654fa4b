#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cuspflow/spectral.hpp"

namespace cuspflow {

// Point of the suspension space: forward coordinate x in the coded region,
// backward coordinate x_minus in the stable region near infinity, and roof
// coordinate 0 <= s < R(x).
struct PhasePoint {
    BoundaryPoint x;
    BoundaryPoint x_minus;
    double s = 0.0;
};

struct FlowSystem {
    BranchSystem sys;
    std::vector<MobiusMap> expanding; // invert(branch.map), cached
    std::vector<double> roof_min, roof_max_branch;
    double roof_bound = 0.0; // sup of the roof over the coded region
    double lambda_max = 0.0; // sup of branch contraction factors
    double r_bar = 0.0;      // quadrature mean of the roof against node weights
    std::vector<Vec> nodes;
    std::vector<Vec> node_lo, node_hi; // quadrature cell of each node (jitter box)
    std::vector<double> node_weight;   // invariant measure f * mass, normalized
    std::vector<double> node_cdf;
    std::vector<int> cell_order; // d=1: branches sorted by cell left endpoint
    std::vector<double> cell_lo;
};

// Sampling/evolution bundle over a discretized system and its spectral data.
FlowSystem make_flow_system(const Discretization& disc, const SpectralReport& rep);

// Index of the branch whose cell contains x; -1 when x escapes the coding.
int locate_cell(const FlowSystem& flow, const BoundaryPoint& x);

// R(x) = log |DT(x)| on the located cell.
double roof(const FlowSystem& flow, const BoundaryPoint& x);

struct SampleStats {
    double escape_rate = 0.0;    // redraw fraction during burn-in
    double r_bar_empirical = 0.0;
    double r_bar_stderr = 0.0;
};

// Draws n points of the suspension measure: x from the invariant node weights,
// x_minus from a 50-step backward chain started at infinity, s uniform on
// [0, R(x)) with rejection weight R(x)/sup R. Deterministic under fixed seed.
std::vector<PhasePoint> sample_phase(const FlowSystem& flow, int n, std::uint64_t seed,
                                     SampleStats* stats = nullptr);

struct EvolveResult {
    PhasePoint p;
    int steps = 0;
    double roof_consumed = 0.0;
    MobiusMap word; // contracting composition gamma with x_old = gamma(x_new)
    std::vector<int> branches;
};

// Suspension flow for time t >= 0; throws escape error when the forward orbit
// leaves the coded region.
EvolveResult evolve(const FlowSystem& flow, const PhasePoint& p, double t);

// Unit-tangent-bundle coordinates: Hopf time tau = beta_x(o, base point),
// which equals s + log(1 + |x|^2) on the suspension (the time change putting
// (x, inf, 0) on the unstable horosphere through the origin).
struct FactorPoint {
    BoundaryPoint x, x_minus;
    double hopf_time = 0.0;
};

FactorPoint factor_project(const PhasePoint& p);

// Hopf-time shift of the isometry g at forward endpoint x: the Busemann
// cocycle beta_x(g^{-1} o, o) with o the upper half-space origin.
double hopf_shift(const MobiusMap& g, const BoundaryPoint& x);

// |hopf_time(project(evolve(p,t))) - hopf_time(project(p)) - t + shift(word)|
double semiconjugacy_residual(const FlowSystem& flow, const PhasePoint& p, double t);

using Observable = std::function<double(const PhasePoint&)>;

struct CorrelationSeries {
    std::vector<double> times;
    std::vector<double> rho;
    std::vector<double> stderrs; // batch-means standard errors (20 batches)
    double fitted_eta = 0.0;
    double fit_quality = 0.0; // R^2 of the log|rho| regression
    long long sample_count = 0;
    double escape_rate = 0.0;
    std::vector<int> window; // indices used in the fit: |rho| > 3 * stderr, t > 0
    bool degenerate = false; // no window above the noise floor
};

CorrelationSeries correlation(const FlowSystem& flow, const Observable& phi,
                              const Observable& psi, const std::vector<double>& times,
                              long long n_samples, std::uint64_t seed, int threads = 1);

std::string correlation_to_csv(const CorrelationSeries& c);
std::string correlation_summary_json(const CorrelationSeries& c);

} // namespace cuspflow
