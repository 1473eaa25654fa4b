#include "cuspflow/coding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "cuspflow/report.hpp"

namespace cuspflow {

namespace {

double box_dist(const Vec& x, const Vec& lo, const Vec& hi) {
    double s = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        double d = 0.0;
        if (x[i] < lo[i]) d = lo[i] - x[i];
        else if (x[i] > hi[i]) d = x[i] - hi[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// margin to the box boundary, negative outside
double interior_dist(const Vec& x, const Vec& lo, const Vec& hi) {
    double m = std::numeric_limits<double>::infinity();
    for (int i = 0; i < x.size(); ++i)
        m = std::min({m, x[i] - lo[i], hi[i] - x[i]});
    return m;
}

bool in_box(const Vec& x, const Vec& lo, const Vec& hi, double tol = 1e-12) {
    return interior_dist(x, lo, hi) >= -tol;
}

void append_repeated(std::vector<int>& word, const std::vector<int>& gen_word, long long count) {
    if (gen_word.empty() || count == 0) return;
    if (count > 0) {
        for (long long r = 0; r < count; ++r)
            word.insert(word.end(), gen_word.begin(), gen_word.end());
    } else {
        std::vector<int> inv(gen_word.rbegin(), gen_word.rend());
        for (int& l : inv) l = -l;
        for (long long r = 0; r < -count; ++r)
            word.insert(word.end(), inv.begin(), inv.end());
    }
}

double sup_deriv_on_box(const MobiusMap& m, const Vec& lo, const Vec& hi) {
    if (m.kind == MobiusMap::Kind::affine) return m.scale;
    double dist = box_dist(m.p_inv, lo, hi);
    if (dist <= 0.0) return std::numeric_limits<double>::infinity();
    return m.h / (dist * dist);
}

// bounding box of map(box); exact for d = 1, sampled boundary + Lipschitz
// inflation otherwise
void compute_bb(const MobiusMap& m, const Vec& lo, const Vec& hi, Vec& bb_lo, Vec& bb_hi) {
    int d = static_cast<int>(lo.size());
    if (d == 1) {
        double a = apply(m, BoundaryPoint::at(lo)).v[0];
        double b = apply(m, BoundaryPoint::at(hi)).v[0];
        bb_lo = Vec::Constant(1, std::min(a, b));
        bb_hi = Vec::Constant(1, std::max(a, b));
        return;
    }
    const int grid = 9;
    bb_lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
    bb_hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
    double step = 0.0;
    for (int i = 0; i < d; ++i) step = std::max(step, (hi[i] - lo[i]) / (grid - 1));
    // walk every face of the box on a regular grid
    for (int axis = 0; axis < d; ++axis) {
        for (int side = 0; side < 2; ++side) {
            std::vector<int> idx(d, 0);
            while (true) {
                Vec x(d);
                for (int i = 0; i < d; ++i)
                    x[i] = lo[i] + (hi[i] - lo[i]) * idx[i] / double(grid - 1);
                x[axis] = side ? hi[axis] : lo[axis];
                BoundaryPoint y = apply(m, BoundaryPoint::at(x));
                if (!y.inf) {
                    bb_lo = bb_lo.cwiseMin(y.v);
                    bb_hi = bb_hi.cwiseMax(y.v);
                }
                int i = 0;
                for (; i < d; ++i) {
                    if (i == axis) continue;
                    if (++idx[i] < grid) break;
                    idx[i] = 0;
                }
                if (i == d) break;
            }
        }
    }
    double pad = sup_deriv_on_box(m, lo, hi) * step;
    bb_lo.array() -= pad;
    bb_hi.array() += pad;
}

} // namespace

double h_schedule(int n) { return std::exp(-double(n)); }

int flower_generation(double eta, double h) {
    if (eta <= 0.0 || h <= 0.0) throw validation_error("flower_generation: eta, h must be > 0");
    // smallest n with eta*h <= h_{n-1}... i.e. eta*h in (h_n, h_{n-1}]
    double v = -std::log(eta * h);
    int n = static_cast<int>(std::ceil(v - 1e-12));
    return std::max(n, 1);
}

double branch_sup_deriv(const BranchSystem& sys, const Branch& b) {
    return sup_deriv_on_box(b.map, sys.dom_min[b.tgt], sys.dom_max[b.tgt]);
}

bool branch_contains(const BranchSystem& sys, const Branch& b, const Vec& x) {
    BoundaryPoint y = apply(invert(b.map), BoundaryPoint::at(x));
    if (y.inf) return false;
    return in_box(y.v, sys.dom_min[b.tgt], sys.dom_max[b.tgt]);
}

BranchSystem gauss_system(int n_min, int n_max) {
    if (n_min < 1 || n_max < n_min) throw validation_error("gauss_system: need 1 <= n_min <= n_max");
    BranchSystem sys;
    sys.d = 1;
    sys.dom_min = {Vec::Zero(1)};
    sys.dom_max = {Vec::Constant(1, 1.0)};
    sys.branches.reserve(static_cast<std::size_t>(n_max - n_min + 1));
    for (int n = n_min; n <= n_max; ++n) {
        Branch b;
        b.map = MobiusMap::from_matrix2(0, 1, 1, n); // x -> 1/(n+x)
        b.word = {n};
        b.generation = n;
        compute_bb(b.map, sys.dom_min[0], sys.dom_max[0], b.bb_min, b.bb_max);
        sys.branches.push_back(std::move(b));
    }
    return sys;
}

BranchSystem even_cf_system(double sup_floor) {
    if (!(sup_floor > 0.0) || sup_floor >= 0.25)
        throw validation_error("even_cf_system: sup_floor must be in (0, 0.25)");
    BranchSystem sys;
    sys.d = 1;
    sys.dom_min = {Vec::Zero(1)};
    sys.dom_max = {Vec::Constant(1, 1.0)};
    for (int k = 0;; ++k) {
        // k-th iterate of the parabolic branch 1/(2-x), fixing 1
        MobiusMap pk = MobiusMap::from_matrix2(1.0 - k, k, -k, k + 1.0);
        int kept_at_k = 0;
        for (int n = 1;; ++n) {
            bool kept_at_n = false;
            for (int sgn : {+1, -1}) {
                if (n == 1 && sgn < 0) continue; // the accelerated branch itself
                Branch b;
                MobiusMap base = MobiusMap::from_matrix2(0, 1, sgn, 2.0 * n);
                b.map = (k == 0) ? base : compose(pk, base);
                b.generation = k;
                compute_bb(b.map, sys.dom_min[0], sys.dom_max[0], b.bb_min, b.bb_max);
                if (branch_sup_deriv(sys, b) < sup_floor) continue;
                sys.branches.push_back(std::move(b));
                kept_at_n = true;
            }
            if (!kept_at_n) break;
            ++kept_at_k;
        }
        if (kept_at_k == 0) break;
    }
    return sys;
}

Flower build_flower(const ParabolicPoint& pp, double eta, const GroupModel& g,
                    int src_cusp, int boundary_samples) {
    if (eta <= 0.0 || eta >= 1.0) throw validation_error("build_flower: eta must be in (0,1)");
    if (src_cusp < 0 || src_cusp >= static_cast<int>(g.cusps.size()))
        throw validation_error("build_flower: bad source cusp index");
    const CuspChart& src = g.cusps[src_cusp];
    const CuspChart& tgt = g.cusps[pp.cusp_index];

    Flower f;
    f.point = pp;
    f.src = src_cusp;
    f.tgt = pp.cusp_index;
    f.eta = eta;
    f.gamma = src.g.is_identity() ? pp.map : compose(src.g, pp.map);
    if (f.gamma.kind != MobiusMap::Kind::inversive)
        throw scale_error("build_flower: point coincides with the chart cusp");
    f.h = f.gamma.h;

    const Vec& x_p = f.gamma.p_inv;
    const Vec& p = f.gamma.p;
    int d = g.d;

    // smallest lattice-tiled box R (on the stabilizer axes) with
    // B_Y(2/eta) x R containing B(x_p, 1/eta)
    f.R_min = Vec(d);
    f.R_max = Vec(d);
    std::vector<bool> is_lattice(d, false);
    f.lattice_axis.clear();
    for (const auto& lg : tgt.lattice) {
        int axis = -1;
        for (int i = 0; i < d; ++i) {
            if (std::abs(lg.map.b[i]) > 1e-12) {
                if (axis >= 0)
                    throw validation_error("build_flower: lattice translations must be axis-aligned");
                axis = i;
            }
        }
        if (axis < 0) throw validation_error("build_flower: zero lattice translation");
        f.lattice_axis.push_back(axis);
        is_lattice[axis] = true;
        double t = std::abs(lg.map.b[axis]);
        double base = tgt.domain_min[axis];
        long long k_lo = static_cast<long long>(std::floor((x_p[axis] - 1.0 / eta - base) / t));
        long long k_hi = static_cast<long long>(std::ceil((x_p[axis] + 1.0 / eta - base) / t));
        f.R_min[axis] = base + k_lo * t;
        f.R_max[axis] = base + k_hi * t;
    }
    for (int i = 0; i < d; ++i) {
        if (is_lattice[i]) continue;
        if (std::abs(x_p[i]) + 1.0 / eta > 2.0 / eta)
            throw scale_error("build_flower: pole leaves the transverse window B_Y(2/eta)");
        f.R_min[i] = -2.0 / eta;
        f.R_max[i] = 2.0 / eta;
    }

    // mapped boundary of B_Y(2/eta) x R
    f.boundary.clear();
    if (d == 1) {
        f.boundary.push_back(apply(f.gamma, BoundaryPoint::at(Vec(f.R_min))).v);
        f.boundary.push_back(apply(f.gamma, BoundaryPoint::at(Vec(f.R_max))).v);
    } else {
        int per_face = std::max(2, static_cast<int>(std::round(
                                       std::pow(double(boundary_samples) / (2 * d),
                                                1.0 / (d - 1)))));
        for (int axis = 0; axis < d; ++axis) {
            for (int side = 0; side < 2; ++side) {
                std::vector<int> idx(d, 0);
                while (true) {
                    Vec x(d);
                    for (int i = 0; i < d; ++i)
                        x[i] = f.R_min[i] +
                               (f.R_max[i] - f.R_min[i]) * idx[i] / double(per_face - 1);
                    x[axis] = side ? f.R_max[axis] : f.R_min[axis];
                    BoundaryPoint y = apply(f.gamma, BoundaryPoint::at(x));
                    if (!y.inf) f.boundary.push_back(y.v);
                    int i = 0;
                    for (; i < d; ++i) {
                        if (i == axis) continue;
                        if (++idx[i] < per_face) break;
                        idx[i] = 0;
                    }
                    if (i == d) break;
                }
            }
        }
    }

    f.r_in = std::numeric_limits<double>::infinity();
    f.r_out = 0.0;
    for (const auto& b : f.boundary) {
        double dist = (b - p).norm();
        f.r_in = std::min(f.r_in, dist);
        f.r_out = std::max(f.r_out, dist);
    }
    f.c4_est = f.r_in / (eta * f.h);

    if (!in_box(p, src.domain_min, src.domain_max) ||
        interior_dist(p, src.domain_min, src.domain_max) <= f.r_out)
        throw scale_error("build_flower: flower leaves the chart domain");
    return f;
}

bool flower_contains(const Flower& f, const Vec& x) {
    BoundaryPoint y = apply(invert(f.gamma), BoundaryPoint::at(x));
    if (y.inf) return true; // the point p itself
    return !in_box(y.v, f.R_min, f.R_max, 0.0);
}

double flower_boundary_dist(const Flower& f, const Vec& x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : f.boundary) best = std::min(best, (b - x).norm());
    return best;
}

CodingState init_coding(const GroupModel& g) {
    if (g.cusps.empty()) throw validation_error("init_coding: no cusp charts");
    CodingState st;
    st.system.d = g.d;
    for (const auto& c : g.cusps) {
        st.system.dom_min.push_back(c.domain_min);
        st.system.dom_max.push_back(c.domain_max);
    }
    return st;
}

namespace {

// enumerate the kept stabilizer tiles of a flower and append their cells
void append_flower_cells(CodingState& st, Flower& f, const CodingParams& par,
                         const GroupModel& g) {
    const CuspChart& tgt = g.cusps[f.tgt];
    int rank = static_cast<int>(tgt.lattice.size());
    const Vec& tlo = tgt.domain_min;
    const Vec& thi = tgt.domain_max;
    double reach = std::sqrt(f.h / par.truncation_floor);

    std::vector<long long> k(rank, 0);
    std::vector<long long> kmax(rank), in_lo(rank), in_hi(rank);
    for (int j = 0; j < rank; ++j) {
        int axis = f.lattice_axis[j];
        double t = std::abs(tgt.lattice[j].map.b[axis]);
        kmax[j] = static_cast<long long>(
                      std::ceil((reach + std::abs(f.gamma.p_inv[axis]) +
                                 std::abs(tlo[axis]) + std::abs(thi[axis])) / t)) + 1;
        // tiles [base + k t, base + (k+1) t] inside R
        in_lo[j] = llround((f.R_min[axis] - tlo[axis]) / t);
        in_hi[j] = llround((f.R_max[axis] - tlo[axis]) / t) - 1;
        k[j] = -kmax[j];
    }

    while (true) {
        bool inside_R = true;
        for (int j = 0; j < rank; ++j)
            if (k[j] < in_lo[j] || k[j] > in_hi[j]) { inside_R = false; break; }
        if (!inside_R) {
            Vec shift = Vec::Zero(g.d);
            for (int j = 0; j < rank; ++j) shift += double(k[j]) * tgt.lattice[j].map.b;
            MobiusMap m = compose(f.gamma, MobiusMap::translation(shift));
            if (sup_deriv_on_box(m, tlo, thi) >= par.truncation_floor) {
                Branch br;
                br.map = std::move(m);
                br.word = f.point.word;
                for (int j = 0; j < rank; ++j)
                    append_repeated(br.word, tgt.lattice[j].word, k[j]);
                br.src = f.src;
                br.tgt = f.tgt;
                br.generation = f.generation;
                compute_bb(br.map, tlo, thi, br.bb_min, br.bb_max);
                f.tiles.push_back(k);
                st.system.branches.push_back(std::move(br));
                if (static_cast<long long>(st.system.branches.size()) > par.cell_cap)
                    throw budget_error("coding: cell cap exceeded");
            }
        }
        int j = 0;
        for (; j < rank; ++j) {
            if (++k[j] <= kmax[j]) break;
            k[j] = -kmax[j];
        }
        if (j == rank) break;
    }
}

} // namespace

void coding_step(CodingState& st, const CodingParams& par, const GroupModel& g,
                 const std::vector<ParabolicPoint>& pts) {
    if (st.system.dom_min.empty()) st = init_coding(g);
    int next = st.generation + 1;
    double hn = h_schedule(st.generation);

    struct Candidate {
        const ParabolicPoint* pp;
        int src;
    };
    std::vector<Candidate> selected;
    std::unordered_set<std::string> taken; // (src, rounded p) dedup

    for (int src = 0; src < static_cast<int>(g.cusps.size()); ++src) {
        const CuspChart& chart = g.cusps[src];
        for (const auto& pp : pts) {
            MobiusMap ms = chart.g.is_identity() ? pp.map : compose(chart.g, pp.map);
            if (ms.kind != MobiusMap::Kind::inversive) continue;
            if (flower_generation(par.eta, ms.h) != next) continue;
            const Vec& p = ms.p;
            if (!in_box(p, chart.domain_min, chart.domain_max)) continue;

            std::string key(1, static_cast<char>('0' + src));
            for (int i = 0; i < g.d; ++i) {
                long long r = llround(p[i] * 1e9);
                key.append(reinterpret_cast<const char*>(&r), sizeof(r));
            }
            if (taken.count(key)) continue;

            bool inside = true;
            double dist = interior_dist(p, chart.domain_min, chart.domain_max);
            for (const auto& fl : st.flowers) {
                if (fl.src != src) continue;
                if (flower_contains(fl, p)) { inside = false; break; }
                dist = std::min(dist, flower_boundary_dist(fl, p));
            }
            if (!inside) continue;
            if (dist <= std::max(hn / (4.0 * par.eta), par.eta * ms.h)) continue;
            taken.insert(std::move(key));
            selected.push_back({&pp, src});
        }
    }

    for (const auto& cand : selected) {
        Flower f = build_flower(*cand.pp, par.eta, g, cand.src, par.boundary_samples);
        f.generation = next;
        append_flower_cells(st, f, par, g);
        st.flowers.push_back(std::move(f));
    }
    st.generation = next;
}

double default_cell_mass(const BranchSystem& sys, const Branch& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < sys.dom_min.size(); ++i) {
        double v = 1.0;
        for (int j = 0; j < sys.d; ++j) v *= sys.dom_max[i][j] - sys.dom_min[i][j];
        total += v;
    }
    const Vec& lo = sys.dom_min[b.tgt];
    const Vec& hi = sys.dom_max[b.tgt];
    if (sys.d == 1) return (b.bb_max[0] - b.bb_min[0]) / total;
    // midpoint rule for the Jacobian integral over the target box
    double vol = 1.0;
    for (int j = 0; j < sys.d; ++j) vol *= hi[j] - lo[j];
    Vec mid = 0.5 * (lo + hi);
    double jac = std::pow(deriv(b.map, BoundaryPoint::at(mid), Metric::euclidean), sys.d);
    return jac * vol / total;
}

void replay_residuals(CodingResult& res, const CellMassFn& mass) {
    CodingState& st = res.state;
    int N = st.generation;
    std::vector<double> removed(static_cast<std::size_t>(N) + 1, 0.0);
    for (const auto& b : st.system.branches)
        if (b.generation >= 1 && b.generation <= N)
            removed[static_cast<std::size_t>(b.generation)] += mass(st.system, b);

    st.residual_series.assign(static_cast<std::size_t>(N) + 1, 0.0);
    double r = 1.0;
    st.residual_series[0] = r;
    for (int n = 1; n <= N; ++n) {
        r -= removed[static_cast<std::size_t>(n)];
        st.residual_series[static_cast<std::size_t>(n)] = std::max(r, 0.0);
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int cnt = 0;
    for (int n = 0; n <= N; ++n) {
        double v = st.residual_series[static_cast<std::size_t>(n)];
        if (v <= 0.0) break;
        double y = std::log(v);
        sx += n; sy += y; sxx += double(n) * n; sxy += n * y;
        ++cnt;
    }
    if (cnt >= 2) {
        double denom = cnt * sxx - sx * sx;
        res.slope = (cnt * sxy - sx * sy) / denom;
        res.intercept = (sy - res.slope * sx) / cnt;
    } else {
        res.slope = 0.0;
        res.intercept = 0.0;
    }
}

CodingResult run_coding(const GroupModel& g, const CodingParams& par,
                        const std::vector<ParabolicPoint>& pts,
                        const CellMassFn& mass) {
    if (par.eta <= 0.0 || par.eta >= 1.0) throw validation_error("run_coding: eta must be in (0,1)");
    if (par.max_generation < 1) throw validation_error("run_coding: max_generation must be >= 1");
    CodingResult res;
    res.state = init_coding(g);
    for (int n = 0; n < par.max_generation; ++n) coding_step(res.state, par, g, pts);
    replay_residuals(res, mass ? mass : default_cell_mass);
    return res;
}

InducedResult induce_first_return(const BranchSystem& sys, int cap, double delta_hint,
                                  double truncation_floor) {
    if (cap < 1) throw validation_error("induce_first_return: cap must be >= 1");
    InducedResult out;
    out.system.d = sys.d;
    out.system.dom_min = {sys.dom_min[0]};
    out.system.dom_max = {sys.dom_max[0]};
    out.mass_by_excursion.assign(static_cast<std::size_t>(cap) + 1, 0.0);

    std::vector<std::vector<const Branch*>> by_src(sys.dom_min.size());
    std::vector<std::vector<double>> sup_by_src(sys.dom_min.size());
    for (const auto& b : sys.branches) {
        by_src[static_cast<std::size_t>(b.src)].push_back(&b);
        sup_by_src[static_cast<std::size_t>(b.src)].push_back(branch_sup_deriv(sys, b));
    }

    struct Chain {
        MobiusMap map;
        std::vector<int> word;
        int tgt;
        int len;
        double bound; // product of factor sup-derivatives
    };
    std::vector<Chain> stack;
    for (std::size_t i = 0; i < by_src[0].size(); ++i) {
        const Branch* b = by_src[0][i];
        double sup = sup_by_src[0][i];
        if (sup < truncation_floor) {
            out.truncated_mass += std::pow(sup, delta_hint);
            continue;
        }
        stack.push_back({b->map, b->word, b->tgt, 1, sup});
    }

    while (!stack.empty()) {
        Chain c = std::move(stack.back());
        stack.pop_back();
        if (c.tgt == 0) {
            Branch br;
            br.map = c.map;
            br.word = std::move(c.word);
            br.src = 0;
            br.tgt = 0;
            br.generation = c.len;
            compute_bb(br.map, sys.dom_min[0], sys.dom_max[0], br.bb_min, br.bb_max);
            double sup = branch_sup_deriv(out.system, br);
            out.mass_by_excursion[static_cast<std::size_t>(c.len)] += std::pow(sup, delta_hint);
            out.system.branches.push_back(std::move(br));
            continue;
        }
        if (c.len >= cap) {
            out.truncated_mass += std::pow(c.bound, delta_hint);
            continue;
        }
        const auto& nexts = by_src[static_cast<std::size_t>(c.tgt)];
        const auto& sups = sup_by_src[static_cast<std::size_t>(c.tgt)];
        for (std::size_t i = 0; i < nexts.size(); ++i) {
            double bound = c.bound * sups[i];
            if (bound < truncation_floor) {
                // prune before composing; same accounting as popping the child
                out.truncated_mass += std::pow(bound, delta_hint);
                continue;
            }
            const Branch* b = nexts[i];
            Chain nc;
            nc.map = compose(c.map, b->map);
            nc.word = c.word;
            nc.word.insert(nc.word.end(), b->word.begin(), b->word.end());
            nc.tgt = b->tgt;
            nc.len = c.len + 1;
            nc.bound = bound;
            stack.push_back(std::move(nc));
        }
    }
    if (out.system.branches.empty())
        throw irreducibility_error("induce_first_return: no return path to the base domain");
    return out;
}

TailReport tail_report(const BranchSystem& sys, double delta, double epsilon) {
    std::vector<double> terms;
    terms.reserve(sys.branches.size());
    for (const auto& b : sys.branches)
        terms.push_back(std::pow(branch_sup_deriv(sys, b), delta - epsilon));
    std::sort(terms.rbegin(), terms.rend());

    TailReport rep;
    double s = 0.0;
    std::size_t next_mark = 1;
    std::vector<double> dyadic; // S at counts 1, 2, 4, ...
    for (std::size_t i = 0; i < terms.size(); ++i) {
        s += terms[i];
        if (i + 1 == next_mark) {
            dyadic.push_back(s);
            next_mark *= 2;
        }
    }
    rep.partial_sums = dyadic;
    if (dyadic.empty() || dyadic.back() != s) rep.partial_sums.push_back(s);
    std::size_t n = rep.partial_sums.size();
    rep.last_increment = n >= 2 ? rep.partial_sums[n - 1] - rep.partial_sums[n - 2]
                                : (n == 1 ? rep.partial_sums[0] : 0.0);

    rep.extrapolated_total = s;
    if (dyadic.size() >= 3) {
        double b1 = dyadic[dyadic.size() - 2] - dyadic[dyadic.size() - 3];
        double b2 = dyadic[dyadic.size() - 1] - dyadic[dyadic.size() - 2];
        if (b1 > 0.0 && b2 > 0.0 && b2 < b1) {
            double r = b2 / b1;
            rep.extrapolated_total = dyadic.back() + b2 * r / (1.0 - r);
        }
    }
    return rep;
}

ContractionReport contraction_distortion_report(const BranchSystem& sys, int samples) {
    if (sys.branches.empty())
        throw validation_error("contraction_distortion_report: empty branch system");
    ContractionReport rep;
    for (const auto& b : sys.branches) {
        double sup = branch_sup_deriv(sys, b);
        if (sup >= 1.0)
            throw contraction_error("branch is not uniformly contracting: sup derivative " +
                                    std::to_string(sup));
        rep.lambda_max = std::max(rep.lambda_max, sup);
        if (b.map.kind == MobiusMap::Kind::affine) continue;
        const Vec& lo = sys.dom_min[b.tgt];
        const Vec& hi = sys.dom_max[b.tgt];
        double dist = box_dist(b.map.p_inv, lo, hi);
        rep.c1_max = std::max(rep.c1_max, 2.0 / dist);
        int per_axis = std::max(2, static_cast<int>(std::round(
                                       std::pow(double(samples), 1.0 / sys.d))));
        std::vector<int> idx(static_cast<std::size_t>(sys.d), 0);
        while (true) {
            Vec x(sys.d);
            for (int i = 0; i < sys.d; ++i)
                x[i] = lo[i] + (hi[i] - lo[i]) * idx[static_cast<std::size_t>(i)] /
                                   double(per_axis - 1);
            rep.c1_sampled = std::max(rep.c1_sampled, 2.0 / (x - b.map.p_inv).norm());
            int i = 0;
            for (; i < sys.d; ++i) {
                if (++idx[static_cast<std::size_t>(i)] < per_axis) break;
                idx[static_cast<std::size_t>(i)] = 0;
            }
            if (i == sys.d) break;
        }
    }
    return rep;
}

UniCertificate uni_search(const BranchSystem& sys, int n0, const UniGrid& grid) {
    if (n0 < 1) throw validation_error("uni_search: n0 must be >= 1");
    for (const auto& b : sys.branches)
        if (b.src != 0 || b.tgt != 0)
            throw validation_error("uni_search: single-domain system required (induce first)");

    UniCertificate cert;
    cert.n0 = n0;
    cert.radius = grid.radius;
    if (sys.branches.size() < 2) return cert; // failure: no pair exists

    const Vec& lo = sys.dom_min[0];
    const Vec& hi = sys.dom_max[0];
    int d = sys.d;

    // compositions H_{n0}
    struct Elem {
        MobiusMap map;
        std::vector<int> word;
    };
    std::vector<Elem> pool;
    for (const auto& b : sys.branches) pool.push_back({b.map, b.word});
    for (int level = 2; level <= n0; ++level) {
        std::vector<Elem> next;
        for (const auto& e : pool) {
            for (const auto& b : sys.branches) {
                Elem ne;
                ne.map = compose(e.map, b.map);
                ne.word = e.word;
                ne.word.insert(ne.word.end(), b.word.begin(), b.word.end());
                next.push_back(std::move(ne));
                if (static_cast<long long>(next.size()) > grid.pool_cap) break;
            }
            if (static_cast<long long>(next.size()) > grid.pool_cap) break;
        }
        pool = std::move(next);
    }
    std::vector<const Elem*> members;
    for (const auto& e : pool)
        if (e.map.kind == MobiusMap::Kind::inversive) members.push_back(&e);
    if (members.size() > 64) members.resize(64);
    if (members.size() < 2) return cert;

    // lambda and C1 of the base system, guarded against lambda >= 1
    double lambda = 0.0, c1 = 0.0;
    for (const auto& b : sys.branches) {
        lambda = std::max(lambda, branch_sup_deriv(sys, b));
        if (b.map.kind == MobiusMap::Kind::inversive)
            c1 = std::max(c1, 2.0 / box_dist(b.map.p_inv, lo, hi));
    }
    cert.c2_bound = lambda < 1.0 ? c1 / (1.0 - lambda)
                                 : std::numeric_limits<double>::infinity();

    // sample grid of base points, directions, and ball offsets
    std::vector<Vec> base;
    int per_axis = std::max(2, static_cast<int>(std::round(
                                   std::pow(double(grid.base_points), 1.0 / d))));
    {
        std::vector<int> idx(static_cast<std::size_t>(d), 0);
        while (true) {
            Vec x(d);
            for (int i = 0; i < d; ++i)
                x[i] = lo[i] + (hi[i] - lo[i]) * idx[static_cast<std::size_t>(i)] /
                                   double(per_axis - 1);
            base.push_back(x);
            int i = 0;
            for (; i < d; ++i) {
                if (++idx[static_cast<std::size_t>(i)] < per_axis) break;
                idx[static_cast<std::size_t>(i)] = 0;
            }
            if (i == d) break;
        }
    }
    std::vector<Vec> dirs;
    if (d == 1) {
        dirs.push_back(Vec::Constant(1, 1.0));
    } else if (d == 2) {
        for (int k = 0; k < grid.directions; ++k) {
            double a = M_PI * k / grid.directions;
            Vec e(2);
            e << std::cos(a), std::sin(a);
            dirs.push_back(e);
        }
    } else {
        std::mt19937_64 rng(12345);
        std::normal_distribution<double> gauss;
        for (int k = 0; k < grid.directions; ++k) {
            Vec e(d);
            for (int i = 0; i < d; ++i) e[i] = gauss(rng);
            dirs.push_back(e.normalized());
        }
    }
    std::vector<Vec> offsets;
    if (d == 1) {
        for (int k = 0; k < grid.ball_samples; ++k)
            offsets.push_back(Vec::Constant(
                1, -grid.radius + 2.0 * grid.radius * k / (grid.ball_samples - 1)));
    } else {
        std::mt19937_64 rng(54321);
        std::normal_distribution<double> gauss;
        offsets.push_back(Vec::Zero(d));
        for (int k = 1; k < grid.ball_samples; ++k) {
            Vec u(d);
            for (int i = 0; i < d; ++i) u[i] = gauss(rng);
            offsets.push_back(grid.radius * u.normalized());
        }
    }

    auto pair_value = [&](const Vec& y, const Vec& e, const Vec& xi1, const Vec& xi2) {
        Vec v1 = 2.0 * (y - xi1) / (y - xi1).squaredNorm();
        Vec v2 = 2.0 * (y - xi2) / (y - xi2).squaredNorm();
        return std::abs((v1 - v2).dot(e));
    };

    double eps0 = std::numeric_limits<double>::infinity();
    std::set<std::pair<std::size_t, std::size_t>> used;
    for (const auto& x : base) {
        for (const auto& e : dirs) {
            double best = -1.0;
            std::pair<std::size_t, std::size_t> best_pair{0, 0};
            for (std::size_t i = 0; i < members.size(); ++i) {
                for (std::size_t j = i + 1; j < members.size(); ++j) {
                    const Vec& xi1 = members[i]->map.p_inv;
                    const Vec& xi2 = members[j]->map.p_inv;
                    double worst = std::numeric_limits<double>::infinity();
                    for (const auto& off : offsets) {
                        Vec y = (x + off).cwiseMax(lo).cwiseMin(hi);
                        worst = std::min(worst, pair_value(y, e, xi1, xi2));
                        if (worst <= best) break;
                    }
                    if (worst > best) {
                        best = worst;
                        best_pair = {i, j};
                    }
                }
            }
            eps0 = std::min(eps0, best);
            used.insert(best_pair);
        }
    }

    cert.epsilon0 = eps0;
    cert.ok = eps0 >= grid.floor_eps;
    for (const auto& [i, j] : used) {
        cert.pairs.emplace_back(members[i]->word, members[j]->word);
        for (std::size_t m : {i, j}) {
            double dist = box_dist(members[m]->map.p_inv, lo, hi);
            if (dist > 0.0) cert.dtau_max = std::max(cert.dtau_max, 2.0 / dist);
        }
    }
    return cert;
}

namespace {

using nlohmann::json;

JValue vec_json(const Vec& v) {
    JValue a = JValue::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

JValue map_json(const MobiusMap& m) {
    JValue o = JValue::object();
    JValue A = JValue::array();
    for (int i = 0; i < m.d; ++i) {
        JValue row = JValue::array();
        for (int j = 0; j < m.d; ++j) row.push_back(m.A(i, j));
        A.push_back(std::move(row));
    }
    if (m.kind == MobiusMap::Kind::inversive) {
        o["kind"] = "inversive";
        o["p"] = vec_json(m.p);
        o["p_inv"] = vec_json(m.p_inv);
        o["h"] = m.h;
    } else {
        o["kind"] = "affine";
        o["b"] = vec_json(m.b);
        o["scale"] = m.scale;
    }
    o["A"] = std::move(A);
    return o;
}

Vec parse_vec(const json& j) {
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
    return v;
}

Mat parse_mat(const json& j) {
    int rows = static_cast<int>(j.size());
    Mat m(rows, rows);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < rows; ++c) m(i, c) = j[i][c].get<double>();
    return m;
}

MobiusMap parse_map(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "inversive")
        return MobiusMap::inversive(parse_vec(j.at("p")), parse_vec(j.at("p_inv")),
                                    j.at("h").get<double>(), parse_mat(j.at("A")));
    if (kind == "affine")
        return MobiusMap::affine(parse_mat(j.at("A")), parse_vec(j.at("b")),
                                 j.at("scale").get<double>());
    throw validation_error("coding document: unknown map kind " + kind);
}

} // namespace

std::string coding_to_string(const CodingState& st, const CodingParams& par) {
    JValue j = JValue::object();
    j["dimension"] = st.system.d;
    j["generation"] = st.generation;
    JValue params = JValue::object();
    params["eta"] = par.eta;
    params["max_generation"] = par.max_generation;
    params["truncation_floor"] = par.truncation_floor;
    params["delta_hint"] = par.delta_hint;
    j["params"] = std::move(params);
    JValue doms = JValue::array();
    for (std::size_t i = 0; i < st.system.dom_min.size(); ++i) {
        JValue o = JValue::object();
        o["min"] = vec_json(st.system.dom_min[i]);
        o["max"] = vec_json(st.system.dom_max[i]);
        doms.push_back(std::move(o));
    }
    j["domains"] = std::move(doms);
    JValue res = JValue::array();
    for (double r : st.residual_series) res.push_back(r);
    j["residual_series"] = std::move(res);
    JValue cells = JValue::array();
    for (const auto& b : st.system.branches) {
        JValue o = JValue::object();
        JValue w = JValue::array();
        for (int l : b.word) w.push_back(static_cast<long long>(l));
        o["word"] = std::move(w);
        o["src"] = b.src;
        o["tgt"] = b.tgt;
        o["generation"] = b.generation;
        o["map"] = map_json(b.map);
        cells.push_back(std::move(o));
    }
    j["cells"] = std::move(cells);
    return j.dump();
}

std::pair<CodingState, CodingParams> coding_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw validation_error(std::string("coding document: parse error: ") + e.what());
    }
    CodingState st;
    CodingParams par;
    st.system.d = j.at("dimension").get<int>();
    st.generation = j.at("generation").get<int>();
    const auto& pj = j.at("params");
    par.eta = pj.at("eta").get<double>();
    par.max_generation = pj.at("max_generation").get<int>();
    par.truncation_floor = pj.at("truncation_floor").get<double>();
    par.delta_hint = pj.at("delta_hint").get<double>();
    for (const auto& dj : j.at("domains")) {
        st.system.dom_min.push_back(parse_vec(dj.at("min")));
        st.system.dom_max.push_back(parse_vec(dj.at("max")));
    }
    for (const auto& r : j.at("residual_series")) st.residual_series.push_back(r.get<double>());
    for (const auto& cj : j.at("cells")) {
        Branch b;
        for (const auto& l : cj.at("word")) b.word.push_back(l.get<int>());
        b.src = cj.at("src").get<int>();
        b.tgt = cj.at("tgt").get<int>();
        b.generation = cj.at("generation").get<int>();
        b.map = parse_map(cj.at("map"));
        compute_bb(b.map, st.system.dom_min[static_cast<std::size_t>(b.tgt)],
                   st.system.dom_max[static_cast<std::size_t>(b.tgt)], b.bb_min, b.bb_max);
        st.system.branches.push_back(std::move(b));
    }
    return {std::move(st), par};
}

} // namespace cuspflow
