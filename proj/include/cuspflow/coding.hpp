#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cuspflow/group.hpp"

namespace cuspflow {

struct CodingParams {
    double eta = 0.05;           // flower scale
    int max_generation = 12;
    double truncation_floor = 1e-6; // minimum branch sup-derivative retained
    double delta_hint = 0.5;        // exponent for measure-weighted reporting
    int boundary_samples = 1024;    // flower boundary sampling (d >= 2)
    long long cell_cap = 4000000;
};

// generation scale h_n = e^{-n}
double h_schedule(int n);

// the generation at which a flower of scale h qualifies: eta*h in (h_{n+1}, h_n]
int flower_generation(double eta, double h);

// An inverse branch of the expanding map: maps the target domain box onto a
// cell inside the source domain, both in chart coordinates.
struct Branch {
    MobiusMap map;
    std::vector<int> word; // ambient group word; chart conjugation is implicit
    int src = 0;
    int tgt = 0;
    int generation = 0;
    Vec bb_min, bb_max; // bounding box of the cell (exact for d=1)
};

struct BranchSystem {
    int d = 1;
    std::vector<Vec> dom_min, dom_max; // one box per domain symbol
    std::vector<Branch> branches;
};

double branch_sup_deriv(const BranchSystem& sys, const Branch& b);
bool branch_contains(const BranchSystem& sys, const Branch& b, const Vec& x);

// continued-fraction branches x -> 1/(n+x) on [0,1]
BranchSystem gauss_system(int n_min, int n_max);

// even continued-fraction branches x -> 1/(2n +- x) on [0,1], with the
// parabolic branch 1/(2-x) accelerated: complete tiling, uniformly
// contracting, Lebesgue is the exact conformal measure at exponent 1;
// presents the rank-1 cusps 0 and 1 of the level-2 congruence lattice
BranchSystem even_cf_system(double sup_floor = 1e-5);

struct Flower {
    ParabolicPoint point;
    MobiusMap gamma; // chart-tgt -> chart-src, pole in the tgt chart box
    int src = 0, tgt = 0;
    int generation = 0;
    double eta = 0;
    double h = 0; // gamma.h
    // complement-of-box description in pole coordinates: B_Y(2/eta) x R
    Vec R_min, R_max;          // per-coordinate; lattice axes carry the tiled box
    std::vector<int> lattice_axis; // axis index of each stabilizer generator
    std::vector<std::vector<long long>> tiles; // kept stabilizer offsets (N_p, truncated)
    std::vector<Vec> boundary; // mapped region boundary, chart-src coordinates
    double r_in = 0, r_out = 0, c4_est = 0; // containment diagnostics
};

Flower build_flower(const ParabolicPoint& p, double eta, const GroupModel& g,
                    int src_cusp = 0, int boundary_samples = 1024);
bool flower_contains(const Flower& f, const Vec& x); // x in chart-src coords
double flower_boundary_dist(const Flower& f, const Vec& x);

struct CodingState {
    int generation = 0;
    BranchSystem system;
    std::vector<Flower> flowers;
    std::vector<double> residual_series;
};

CodingState init_coding(const GroupModel& g);

// advances one generation: selects qualifying parabolic points against the
// current residual set, removes their flowers and appends the tile cells
void coding_step(CodingState& st, const CodingParams& par, const GroupModel& g,
                 const std::vector<ParabolicPoint>& pts);

using CellMassFn = std::function<double(const BranchSystem&, const Branch&)>;

// normalized Lebesgue volume of the cell
double default_cell_mass(const BranchSystem& sys, const Branch& b);

struct CodingResult {
    CodingState state;
    double slope = 0, intercept = 0; // fit of log residual vs generation
};

CodingResult run_coding(const GroupModel& g, const CodingParams& par,
                        const std::vector<ParabolicPoint>& pts,
                        const CellMassFn& mass = {});

// recompute the residual series and decay fit under a different cell measure
void replay_residuals(CodingResult& res, const CellMassFn& mass);

struct InducedResult {
    BranchSystem system; // every branch maps domain 0 into domain 0
    double truncated_mass = 0;
    std::vector<double> mass_by_excursion; // kept mass per excursion length
};

InducedResult induce_first_return(const BranchSystem& sys, int cap = 20,
                                  double delta_hint = 0.5,
                                  double truncation_floor = 1e-10);

struct TailReport {
    std::vector<double> partial_sums; // at dyadic counts, branches sorted by sup-deriv
    double last_increment = 0;
    double extrapolated_total = 0;
};

TailReport tail_report(const BranchSystem& sys, double delta, double epsilon);

struct ContractionReport {
    double lambda_max = 0;
    double c1_max = 0;     // closed form 2/d(domain, pole) per branch
    double c1_sampled = 0; // gradient samples, always <= c1_max
};

ContractionReport contraction_distortion_report(const BranchSystem& sys, int samples = 200);

struct UniGrid {
    int base_points = 64;
    int directions = 8; // d >= 2; d = 1 uses the single direction +1
    int ball_samples = 9;
    double radius = 0.05;
    double floor_eps = 1e-6;
    long long pool_cap = 4000;
};

struct UniCertificate {
    bool ok = false;
    int n0 = 1;
    double epsilon0 = 0;
    double radius = 0;
    double c2_bound = 0; // C1/(1-lambda); +inf when lambda >= 1
    double dtau_max = 0; // largest observed |D tau| among certified pairs
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
};

UniCertificate uni_search(const BranchSystem& sys, int n0, const UniGrid& grid = {});

std::string coding_to_string(const CodingState& st, const CodingParams& par);
std::pair<CodingState, CodingParams> coding_from_string(const std::string& text);

} // namespace cuspflow
