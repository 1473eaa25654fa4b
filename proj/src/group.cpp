#include "cuspflow/group.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace cuspflow {

namespace {

long long round_grid(double x, double tol) {
    double r = x / tol;
    if (std::abs(r) > 9.0e15) r = std::copysign(9.0e15, r);
    long long v = llround(r);
    return v == 0 ? 0 : v; // normalize -0
}

void key_append(std::string& out, double x, double tol) {
    long long v = round_grid(x, tol);
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

// Distance from a point to an axis box [lo, hi].
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

} // namespace

MobiusMap GroupModel::letter(int l) const {
    int idx = l > 0 ? l - 1 : -l - 1;
    if (idx < 0 || idx >= static_cast<int>(generators.size()))
        throw validation_error("letter index out of range: " + std::to_string(l));
    return l > 0 ? generators[idx] : invert(generators[idx]);
}

std::string canonical_key(const MobiusMap& m, double tol) {
    std::string out;
    out.reserve(8 + 8 * static_cast<std::size_t>(m.d) * (m.d + 3));
    out += m.kind == MobiusMap::Kind::inversive ? 'I' : 'F';
    if (m.kind == MobiusMap::Kind::inversive) {
        for (int i = 0; i < m.d; ++i) key_append(out, m.p[i], tol);
        for (int i = 0; i < m.d; ++i) key_append(out, m.p_inv[i], tol);
        key_append(out, m.h, tol);
    } else {
        for (int i = 0; i < m.d; ++i) key_append(out, m.b[i], tol);
        key_append(out, m.scale, tol);
    }
    for (int i = 0; i < m.d; ++i)
        for (int j = 0; j < m.d; ++j) key_append(out, m.A(i, j), tol);
    return out;
}

std::uint64_t canonical_hash(const MobiusMap& m, double tol) {
    // FNV-1a over the canonical key bytes
    std::string key = canonical_key(m, tol);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : key) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

MobiusMap word_map(const GroupModel& g, const std::vector<int>& word) {
    MobiusMap m = MobiusMap::identity(g.d);
    for (int l : word) m = compose(m, g.letter(l));
    return m;
}

namespace {

// letter ordering: +1, -1, +2, -2, ...
std::vector<int> letter_alphabet(const GroupModel& g) {
    std::vector<int> out;
    for (int i = 1; i <= static_cast<int>(g.generators.size()); ++i) {
        out.push_back(i);
        out.push_back(-i);
    }
    return out;
}

struct Node {
    std::vector<int> word;
    MobiusMap map;
};

} // namespace

std::vector<std::pair<std::vector<int>, MobiusMap>>
enumerate_words(const GroupModel& g, int depth) {
    if (depth < 0) throw validation_error("enumerate_words: negative depth");
    std::vector<std::pair<std::vector<int>, MobiusMap>> out;
    std::unordered_set<std::string> seen;
    auto alphabet = letter_alphabet(g);

    std::vector<Node> frontier{{{}, MobiusMap::identity(g.d)}};
    seen.insert(canonical_key(frontier[0].map));
    out.emplace_back(frontier[0].word, frontier[0].map);

    for (int len = 1; len <= depth; ++len) {
        std::vector<Node> next;
        for (const auto& node : frontier) {
            for (int l : alphabet) {
                if (!node.word.empty() && node.word.back() == -l) continue;
                MobiusMap m = compose(node.map, g.letter(l));
                std::string key = canonical_key(m);
                if (!seen.insert(std::move(key)).second) continue;
                std::vector<int> w = node.word;
                w.push_back(l);
                out.emplace_back(w, m);
                next.push_back({std::move(w), std::move(m)});
                if (static_cast<long long>(out.size()) > g.element_cap)
                    throw budget_error("enumerate_words: element cap " +
                                       std::to_string(g.element_cap) + " exceeded");
            }
        }
        frontier = std::move(next);
    }
    return out;
}

namespace {

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

} // namespace

std::vector<ParabolicPoint> parabolic_points(const GroupModel& g, int depth,
                                             double height_floor,
                                             const ParabolicOptions& opt) {
    if (g.cusps.empty()) throw validation_error("parabolic_points: no cusp charts");
    if (height_floor <= 0.0) throw validation_error("parabolic_points: height_floor must be > 0");
    long long budget = opt.budget >= 0 ? opt.budget : g.element_cap;

    double window_pad = g.window_margin + opt.extra_window;

    // distance from a boundary point to the nearest inflated cusp box,
    // measured in that cusp's chart coordinates
    auto window_dist = [&](const BoundaryPoint& p) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& cusp : g.cusps) {
            BoundaryPoint q = cusp.g.is_identity() ? p : apply(cusp.g, p);
            if (q.inf) continue;
            Vec lo = cusp.domain_min.array() - window_pad;
            Vec hi = cusp.domain_max.array() + window_pad;
            best = std::min(best, box_dist(q.v, lo, hi));
        }
        return best;
    };

    // largest inversive scale among generators (reach estimate for pruning)
    double lam0 = 0.0;
    for (const auto& gen : g.generators)
        if (gen.kind == MobiusMap::Kind::inversive) lam0 = std::max(lam0, gen.h);
    if (lam0 == 0.0) lam0 = 1.0;

    double eff_floor = height_floor * (opt.prune ? g.prune_margin : 1.0) * g.t0;

    auto alphabet = letter_alphabet(g);
    std::unordered_set<std::string> seen_elems;
    std::unordered_map<std::string, std::size_t> point_index; // rounded (cusp, p) -> output slot
    std::vector<ParabolicPoint> out;

    auto consider_point = [&](const std::vector<int>& word, const MobiusMap& m) {
        for (int ci = 0; ci < static_cast<int>(g.cusps.size()); ++ci) {
            const CuspChart& cusp = g.cusps[ci];
            MobiusMap c = cusp.g.is_identity() ? m : compose(m, invert(cusp.g));
            if (c.kind != MobiusMap::Kind::inversive) continue; // stabilizer: no new point
            double h_p = c.h / g.t0;
            if (h_p < height_floor) continue;
            // windowed runs report only points inside the inflated chart boxes
            if (opt.use_window && window_dist(BoundaryPoint::at(c.p)) > 0.0) continue;

            // top-representation normalization: translate the pole into the chart box
            Vec x_p = c.p_inv;
            std::vector<int> w = word;
            if (!cusp.lattice.empty()) {
                int k = static_cast<int>(cusp.lattice.size());
                Mat L(g.d, k);
                for (int j = 0; j < k; ++j) L.col(j) = cusp.lattice[j].map.b;
                Vec center = 0.5 * (cusp.domain_min + cusp.domain_max);
                Vec coeff = L.colPivHouseholderQr().solve(x_p - center);
                for (int j = 0; j < k; ++j) {
                    long long n = llround(coeff[j]);
                    if (n != 0) {
                        x_p -= static_cast<double>(n) * L.col(j);
                        // gamma' = gamma o (g_i^{-1} tau_j^n g_i) has pole x_p - n L_j
                        append_repeated(w, cusp.lattice[j].word, n);
                    }
                }
            }
            MobiusMap c_norm = MobiusMap::inversive(c.p, x_p, c.h, c.A);

            std::string pkey(1, static_cast<char>('0' + ci));
            for (int i = 0; i < g.d; ++i) key_append(pkey, c.p[i], 1e-9);
            auto it = point_index.find(pkey);
            if (it != point_index.end()) continue; // keep the first (shortest) word
            point_index.emplace(std::move(pkey), out.size());

            ParabolicPoint pp;
            pp.p = BoundaryPoint::at(c.p);
            pp.h_p = h_p;
            pp.rank_k = cusp.rank;
            pp.word = std::move(w);
            pp.cusp_index = ci;
            pp.map = c_norm; // the map sending chart-infinity to p with scale h
            pp.pole = x_p;
            out.push_back(std::move(pp));
        }
    };

    std::vector<Node> frontier{{{}, MobiusMap::identity(g.d)}};
    seen_elems.insert(canonical_key(frontier[0].map));
    long long visited = 1;

    // ambient anchor for each chart box (center pulled back through the chart)
    std::vector<BoundaryPoint> anchors;
    double anchor_span = 0.0;
    for (const auto& cusp : g.cusps) {
        Vec center = 0.5 * (cusp.domain_min + cusp.domain_max);
        anchors.push_back(cusp.g.is_identity() ? BoundaryPoint::at(center)
                                               : apply(invert(cusp.g), BoundaryPoint::at(center)));
        anchor_span = std::max(anchor_span,
                               0.5 * (cusp.domain_max - cusp.domain_min).norm() + window_pad);
    }
    double gen_spread = 0.0;
    for (const auto& gen : g.generators)
        if (gen.kind == MobiusMap::Kind::inversive)
            gen_spread = std::max(gen_spread, gen.p.norm());

    auto prune_node = [&](const MobiusMap& m) {
        if (!opt.prune) return false;
        if (m.kind == MobiusMap::Kind::inversive) {
            if (m.h < eff_floor) return true;
            if (opt.use_window) {
                // any point produced below this node sits within
                // sqrt(h * h_max / h_floor) of the node's attracting pole
                double reach = std::sqrt(m.h * lam0 / eff_floor);
                if (window_dist(BoundaryPoint::at(m.p)) > reach) return true;
            }
        } else if (opt.use_window) {
            // affine element: descendants cluster around the translated anchors
            double reach = std::sqrt(lam0 * lam0 / eff_floor) * std::max(1.0, m.scale) +
                           gen_spread * std::max(1.0, m.scale) + anchor_span;
            double best = std::numeric_limits<double>::infinity();
            for (const auto& a : anchors) {
                BoundaryPoint q = apply(m, a);
                if (q.inf) continue;
                best = std::min(best, window_dist(q));
            }
            if (best > reach) return true;
        }
        return false;
    };

    for (int len = 1; len <= depth && !frontier.empty(); ++len) {
        std::vector<Node> next;
        for (const auto& node : frontier) {
            for (int l : alphabet) {
                if (!node.word.empty() && node.word.back() == -l) continue;
                MobiusMap m = compose(node.map, g.letter(l));
                if (!seen_elems.insert(canonical_key(m)).second) continue;
                if (++visited > budget)
                    throw budget_error("parabolic_points: element budget " +
                                       std::to_string(budget) + " exceeded");
                std::vector<int> w = node.word;
                w.push_back(l);
                consider_point(w, m);
                if (len < depth && !prune_node(m))
                    next.push_back({std::move(w), std::move(m)});
            }
        }
        frontier = std::move(next);
    }

    std::sort(out.begin(), out.end(), [](const ParabolicPoint& a, const ParabolicPoint& b) {
        if (a.cusp_index != b.cusp_index) return a.cusp_index < b.cusp_index;
        if (a.h_p != b.h_p) return a.h_p > b.h_p;
        for (int i = 0; i < a.p.v.size(); ++i)
            if (a.p.v[i] != b.p.v[i]) return a.p.v[i] < b.p.v[i];
        return false;
    });
    return out;
}

SeparationReport check_separation(const std::vector<ParabolicPoint>& pts) {
    SeparationReport rep;
    rep.ok = true;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            double dist = boundary_dist(pts[i].p, pts[j].p);
            double bound = std::sqrt(pts[i].h_p * pts[j].h_p);
            double margin = dist - bound;
            if (margin < worst) {
                worst = margin;
                rep.i = static_cast<int>(i);
                rep.j = static_cast<int>(j);
                rep.dist = dist;
                rep.bound = bound;
            }
            if (dist <= bound) rep.ok = false;
        }
    }
    if (!rep.ok && rep.bound > 0.0) {
        // heights scale as 1/t0: need (dist/bound)^2 > 1, suggest doubling past it
        double factor = (rep.bound / rep.dist) * (rep.bound / rep.dist);
        rep.suggested_t0 = 2.0 * factor;
    }
    return rep;
}

double hyperbolic_distance(const HalfSpacePoint& x, const HalfSpacePoint& y) {
    double dh = x.height - y.height;
    double n2 = (x.base - y.base).squaredNorm() + dh * dh;
    return std::acosh(1.0 + n2 / (2.0 * x.height * y.height));
}

OrbitCountResult orbit_count(const GroupModel& g, const std::vector<double>& radii,
                             const HalfSpacePoint& x, const HalfSpacePoint& y) {
    if (radii.empty()) throw validation_error("orbit_count: empty radius ladder");
    for (double r : radii)
        if (r <= 0.0) throw validation_error("orbit_count: radii must be positive");
    double rmax = *std::max_element(radii.begin(), radii.end());
    double expand_limit = rmax + g.orbit_slack;

    OrbitCountResult res;
    res.radii = radii;
    res.counts.assign(radii.size(), 0);

    auto alphabet = letter_alphabet(g);
    std::unordered_set<std::uint64_t> seen;
    auto count_point = [&](const MobiusMap& m) {
        double dist = hyperbolic_distance(x, apply(m, y));
        for (std::size_t i = 0; i < radii.size(); ++i)
            if (dist <= radii[i]) ++res.counts[i];
        return dist;
    };

    struct ONode {
        MobiusMap map;
        int last = 0;
    };
    std::vector<ONode> frontier{{MobiusMap::identity(g.d), 0}};
    if (!g.free_group) seen.insert(canonical_hash(frontier[0].map));
    count_point(frontier[0].map);
    res.expanded = 1;

    while (!frontier.empty()) {
        std::vector<ONode> next;
        for (const auto& node : frontier) {
            for (int l : alphabet) {
                if (node.last == -l) continue;
                MobiusMap m = compose(node.map, g.letter(l));
                if (!g.free_group && !seen.insert(canonical_hash(m)).second) continue;
                if (++res.expanded > g.element_cap)
                    throw budget_error("orbit_count: element cap exceeded");
                double dist = count_point(m);
                if (dist <= expand_limit) next.push_back({std::move(m), l});
            }
        }
        frontier = std::move(next);
    }

    // least-squares fit of log N against T
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < radii.size(); ++i) {
        if (res.counts[i] <= 0) continue;
        double xv = radii[i], yv = std::log(static_cast<double>(res.counts[i]));
        sx += xv; sy += yv; sxx += xv * xv; sxy += xv * yv;
        ++n;
    }
    if (n >= 2) {
        double denom = n * sxx - sx * sx;
        res.slope = (n * sxy - sx * sy) / denom;
        res.intercept = (sy - res.slope * sx) / n;
    }
    return res;
}

double auto_rescale_t0(GroupModel& g, int depth, double height_floor, int max_doublings) {
    for (int it = 0; it <= max_doublings; ++it) {
        auto pts = parabolic_points(g, depth, height_floor);
        if (check_separation(pts).ok) return g.t0;
        g.t0 *= 2.0;
    }
    throw convergence_error("auto_rescale_t0: separation still failing after doublings");
}

} // namespace cuspflow
