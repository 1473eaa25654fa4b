#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cuspflow/boundary.hpp"

namespace cuspflow {

// Lattice generator of a cusp stabilizer, with its spelling in group
// generators (empty when the translation is not a generator word).
struct LatticeGen {
    MobiusMap map;
    std::vector<int> word; // signed 1-based generator indices
};

// Chart data for one cusp: fixed point p, chart map g with g(p) = inf,
// translation rank, fundamental box in chart coordinates, stabilizer lattice.
struct CuspChart {
    BoundaryPoint p;
    MobiusMap g;
    int rank = 1;
    Vec domain_min, domain_max;
    std::vector<LatticeGen> lattice;
};

struct GroupModel {
    int d = 1;
    double t0 = 1.0;
    bool free_group = true;
    std::vector<std::string> labels;
    std::vector<MobiusMap> generators;
    std::vector<CuspChart> cusps;

    // enumeration knobs
    long long element_cap = 4000000;
    double prune_margin = 0.25;  // height branch-and-bound safety factor
    double window_margin = 1.0;  // cusp-domain inflation for point windows
    double orbit_slack = 4.0;    // extra radius allowed while expanding orbit BFS

    // signed 1-based index -> generator or inverse
    MobiusMap letter(int l) const;
};

struct ParabolicPoint {
    BoundaryPoint p;
    double h_p = 0.0;
    int rank_k = 1;
    std::vector<int> word;
    int cusp_index = 0;
    MobiusMap map;  // the element gamma with gamma(p_i) = p (top representation)
    Vec pole;       // x_p = (gamma g_i^{-1})^{-1}(inf), in chart coordinates of the cusp
};

// Canonical rounded form of a map (1e-9 grid) for deduplication.
std::string canonical_key(const MobiusMap& m, double tol = 1e-9);
std::uint64_t canonical_hash(const MobiusMap& m, double tol = 1e-9);

MobiusMap word_map(const GroupModel& g, const std::vector<int>& word);

// All reduced words of length <= depth (deduplicated by canonical form),
// breadth-first, lexicographic by generator index within each length.
std::vector<std::pair<std::vector<int>, MobiusMap>>
enumerate_words(const GroupModel& g, int depth);

struct ParabolicOptions {
    bool use_window = true;       // restrict to cusp-0 domain inflated by window_margin
    bool prune = true;            // height branch-and-bound
    double extra_window = 0.0;    // additional inflation on top of window_margin
    long long budget = -1;        // override element_cap when >= 0
};

std::vector<ParabolicPoint> parabolic_points(const GroupModel& g, int depth,
                                             double height_floor,
                                             const ParabolicOptions& opt = {});

struct SeparationReport {
    bool ok = true;
    int i = -1, j = -1;            // worst pair
    double dist = 0.0;             // d(p_i, p_j)
    double bound = 0.0;            // sqrt(h_i h_j)
    double suggested_t0 = 0.0;     // rescaling that would restore strictness
};

SeparationReport check_separation(const std::vector<ParabolicPoint>& pts);

double hyperbolic_distance(const HalfSpacePoint& x, const HalfSpacePoint& y);

struct OrbitCountResult {
    std::vector<double> radii;
    std::vector<long long> counts;
    double slope = 0.0;      // least-squares slope of log N against T
    double intercept = 0.0;
    long long expanded = 0;  // BFS nodes visited
};

OrbitCountResult orbit_count(const GroupModel& g, const std::vector<double>& radii,
                             const HalfSpacePoint& x, const HalfSpacePoint& y);

// Doubles t0 until check_separation passes on the configured word ball.
double auto_rescale_t0(GroupModel& g, int depth, double height_floor, int max_doublings = 20);

// ---- group description file ------------------------------------------------

GroupModel load_group(const std::string& path);
void save_group(const GroupModel& g, const std::string& path);
std::string group_to_string(const GroupModel& g);
GroupModel group_from_string(const std::string& text, const std::string& origin = "<string>");

} // namespace cuspflow
