#include "cuspflow/flow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "cuspflow/report.hpp"

namespace cuspflow {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro-free minimal generator: splitmix stream, uniform in [0,1)
struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() { return state = splitmix64(state); }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

std::vector<Vec> box_corners(const Vec& lo, const Vec& hi) {
    int d = static_cast<int>(lo.size());
    std::vector<Vec> out;
    for (int m = 0; m < (1 << d); ++m) {
        Vec c(d);
        for (int k = 0; k < d; ++k) c[k] = (m >> k) & 1 ? hi[k] : lo[k];
        out.push_back(std::move(c));
    }
    return out;
}

int pick_node(const FlowSystem& flow, double u) {
    auto it = std::upper_bound(flow.node_cdf.begin(), flow.node_cdf.end(), u);
    int i = static_cast<int>(it - flow.node_cdf.begin());
    return std::min(i, static_cast<int>(flow.node_cdf.size()) - 1);
}

constexpr int kBurnIn = 50;
constexpr int kBatches = 20;

// one attempt at a nu-distributed forward point: node draw + burn-in chain.
// Returns false when the chain escapes the coded region.
bool burn_in(const FlowSystem& flow, Rng& rng, BoundaryPoint& x, BoundaryPoint& xm) {
    int i = pick_node(flow, rng.uniform());
    Vec v = flow.node_lo[static_cast<std::size_t>(i)];
    for (int k = 0; k < flow.sys.d; ++k)
        v[k] += rng.uniform() * (flow.node_hi[static_cast<std::size_t>(i)][k] - v[k]);
    x = BoundaryPoint::at(std::move(v));
    xm = BoundaryPoint::infinity(flow.sys.d);
    for (int k = 0; k < kBurnIn; ++k) {
        int j = locate_cell(flow, x);
        if (j < 0) return false;
        x = apply(flow.expanding[j], x);
        xm = apply(flow.expanding[j], xm);
    }
    return locate_cell(flow, x) >= 0;
}

// draws one suspension point; records the pre-rejection roof values in
// (r_sum, r_sq, r_count) so the caller can compare against the quadrature mean
bool draw_point(const FlowSystem& flow, Rng& rng, PhasePoint& p, long long& escapes,
                long long& attempts, double& r_sum, double& r_sq, long long& r_count) {
    BoundaryPoint x, xm;
    for (int tries = 0; tries < 100000; ++tries) {
        ++attempts;
        if (!burn_in(flow, rng, x, xm)) {
            ++escapes;
            continue;
        }
        double R = roof(flow, x);
        r_sum += R;
        r_sq += R * R;
        ++r_count;
        // fiber mass proportional to R: accept with probability R / sup R
        if (rng.uniform() * flow.roof_bound > R) continue;
        p.x = x;
        p.x_minus = xm;
        p.s = rng.uniform() * R;
        return true;
    }
    return false;
}

struct Fit {
    double slope = 0, intercept = 0, r2 = 0;
};

Fit lsq(const std::vector<double>& xs, const std::vector<double>& ys) {
    Fit f;
    int n = static_cast<int>(xs.size());
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

} // namespace

FlowSystem make_flow_system(const Discretization& disc, const SpectralReport& rep) {
    if (disc.sys.dom_min.size() != 1)
        throw validation_error("the suspension needs a single-domain branch system");
    FlowSystem flow;
    flow.sys = disc.sys;
    flow.nodes = disc.nodes;

    std::size_t nb = flow.sys.branches.size();
    flow.expanding.reserve(nb);
    flow.roof_min.resize(nb);
    flow.roof_max_branch.resize(nb);
    flow.lambda_max = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
        const Branch& b = flow.sys.branches[j];
        flow.expanding.push_back(invert(b.map));
        flow.lambda_max = std::max(flow.lambda_max, disc.sup_derivs[j]);
        flow.roof_min[j] = -std::log(disc.sup_derivs[j]);
        // |gamma'| over a box attains its minimum at a corner (farthest from
        // the pole), so the per-branch roof maximum is exact
        double dmin = std::numeric_limits<double>::infinity();
        for (const Vec& c : box_corners(b.bb_min, b.bb_max))
            dmin = std::min(dmin, deriv(b.map, BoundaryPoint::at(c), Metric::euclidean));
        flow.roof_max_branch[j] = -std::log(dmin);
        flow.roof_bound = std::max(flow.roof_bound, flow.roof_max_branch[j]);
    }

    if (flow.sys.d == 1) {
        flow.cell_order.resize(nb);
        std::iota(flow.cell_order.begin(), flow.cell_order.end(), 0);
        std::sort(flow.cell_order.begin(), flow.cell_order.end(), [&](int a, int b2) {
            return flow.sys.branches[static_cast<std::size_t>(a)].bb_min[0] <
                   flow.sys.branches[static_cast<std::size_t>(b2)].bb_min[0];
        });
        flow.cell_lo.reserve(nb);
        for (int j : flow.cell_order)
            flow.cell_lo.push_back(flow.sys.branches[static_cast<std::size_t>(j)].bb_min[0]);
    }

    // jitter boxes: the quadrature cell around each node
    std::size_t nn = flow.nodes.size();
    flow.node_lo.resize(nn);
    flow.node_hi.resize(nn);
    if (flow.sys.d == 1) {
        const Vec& lo = flow.sys.dom_min[0];
        const Vec& hi = flow.sys.dom_max[0];
        for (std::size_t i = 0; i < nn; ++i) {
            double l = i == 0 ? lo[0] : 0.5 * (flow.nodes[i - 1][0] + flow.nodes[i][0]);
            double r = i + 1 == nn ? hi[0] : 0.5 * (flow.nodes[i][0] + flow.nodes[i + 1][0]);
            flow.node_lo[i] = Vec::Constant(1, l);
            flow.node_hi[i] = Vec::Constant(1, r);
        }
    } else {
        Vec spacing = flow.sys.dom_max[0] - flow.sys.dom_min[0];
        for (int k = 0; k < flow.sys.d; ++k)
            spacing[k] /= std::max(1, disc.grid_dims.empty() ? 1 : disc.grid_dims[k]);
        for (std::size_t i = 0; i < nn; ++i) {
            flow.node_lo[i] =
                (flow.nodes[i] - 0.5 * spacing).cwiseMax(flow.sys.dom_min[0]);
            flow.node_hi[i] =
                (flow.nodes[i] + 0.5 * spacing).cwiseMin(flow.sys.dom_max[0]);
        }
    }

    // invariant measure: density f against the conformal masses
    flow.node_weight.resize(flow.nodes.size());
    double total = 0.0, rsum = 0.0, rweight = 0.0;
    for (std::size_t i = 0; i < flow.nodes.size(); ++i) {
        flow.node_weight[i] = std::max(0.0, rep.f[static_cast<int>(i)] *
                                                rep.mass[static_cast<int>(i)]);
        total += flow.node_weight[i];
    }
    if (total <= 0.0) throw validation_error("spectral report carries no mass");
    flow.node_cdf.resize(flow.nodes.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < flow.nodes.size(); ++i) {
        flow.node_weight[i] /= total;
        acc += flow.node_weight[i];
        flow.node_cdf[i] = acc;
        BoundaryPoint x = BoundaryPoint::at(flow.nodes[i]);
        int j = locate_cell(flow, x);
        if (j < 0) continue; // truncation gap: excluded from the quadrature
        rsum += flow.node_weight[i] * std::log(deriv(flow.expanding[j], x, Metric::euclidean));
        rweight += flow.node_weight[i];
    }
    if (rweight <= 0.0) throw validation_error("no quadrature node lies in a coded cell");
    flow.r_bar = rsum / rweight;
    return flow;
}

int locate_cell(const FlowSystem& flow, const BoundaryPoint& x) {
    if (x.inf) return -1;
    const double tol = 1e-12;
    if (flow.sys.d == 1 && !flow.cell_order.empty()) {
        double v = x.v[0];
        auto it = std::upper_bound(flow.cell_lo.begin(), flow.cell_lo.end(), v + tol);
        for (auto pos = it - flow.cell_lo.begin(); pos > 0; --pos) {
            int j = flow.cell_order[static_cast<std::size_t>(pos - 1)];
            const Branch& b = flow.sys.branches[static_cast<std::size_t>(j)];
            if (v >= b.bb_min[0] - tol && v <= b.bb_max[0] + tol) return j;
            if (v > b.bb_max[0] + tol) break; // disjoint cells: a gap
        }
        return -1;
    }
    for (std::size_t j = 0; j < flow.sys.branches.size(); ++j) {
        const Branch& b = flow.sys.branches[j];
        bool in = true;
        for (int k = 0; k < flow.sys.d && in; ++k)
            in = x.v[k] >= b.bb_min[k] - tol && x.v[k] <= b.bb_max[k] + tol;
        if (in) return static_cast<int>(j);
    }
    return -1;
}

double roof(const FlowSystem& flow, const BoundaryPoint& x) {
    int j = locate_cell(flow, x);
    if (j < 0) throw escape_error("point outside every coded cell");
    return std::log(deriv(flow.expanding[j], x, Metric::euclidean));
}

std::vector<PhasePoint> sample_phase(const FlowSystem& flow, int n, std::uint64_t seed,
                                     SampleStats* stats) {
    if (n <= 0) throw validation_error("sample count must be positive");
    std::vector<PhasePoint> out(n);
    long long escapes = 0, attempts = 0, r_count = 0;
    double r_sum = 0, r_sq = 0;
    for (int i = 0; i < n; ++i) {
        Rng rng(splitmix64(seed ^ (0x5851f42d4c957f2dULL * (i + 1))));
        if (!draw_point(flow, rng, out[i], escapes, attempts, r_sum, r_sq, r_count))
            throw escape_error("sampling failed to land in the coded region");
        PhasePoint& p = out[i];
        if (p.s < 0.0 || p.s >= roof(flow, p.x))
            throw validation_error("roof coordinate out of range");
    }
    if (stats) {
        stats->escape_rate = attempts > 0 ? static_cast<double>(escapes) / attempts : 0.0;
        stats->r_bar_empirical = r_count > 0 ? r_sum / r_count : 0.0;
        double var = r_count > 1
                         ? (r_sq - r_sum * r_sum / r_count) / (r_count - 1)
                         : 0.0;
        stats->r_bar_stderr = r_count > 0 ? std::sqrt(std::max(0.0, var) / r_count) : 0.0;
    }
    return out;
}

EvolveResult evolve(const FlowSystem& flow, const PhasePoint& p, double t) {
    if (t < 0.0) throw validation_error("the suspension flow runs forward only");
    EvolveResult res;
    res.p = p;
    res.word = MobiusMap::identity(flow.sys.d);
    double rem = p.s + t;
    long long cap = 1000 + static_cast<long long>(50.0 * (t + 1.0));
    while (true) {
        int j = locate_cell(flow, res.p.x);
        if (j < 0) throw escape_error("forward orbit left the coded region");
        double R = std::log(deriv(flow.expanding[j], res.p.x, Metric::euclidean));
        if (rem < R) break;
        rem -= R;
        res.roof_consumed += R;
        res.p.x = apply(flow.expanding[j], res.p.x);
        res.p.x_minus = apply(flow.expanding[j], res.p.x_minus);
        res.word = compose(res.word, flow.sys.branches[j].map);
        res.branches.push_back(j);
        if (++res.steps > cap)
            throw convergence_error("the orbit stalled below the roof");
    }
    res.p.s = rem;
    return res;
}

FactorPoint factor_project(const PhasePoint& p) {
    FactorPoint f;
    f.x = p.x;
    f.x_minus = p.x_minus;
    double q = p.x.inf ? 0.0 : p.x.v.squaredNorm();
    f.hopf_time = p.s + std::log1p(q);
    return f;
}

double hopf_shift(const MobiusMap& g, const BoundaryPoint& x) {
    HalfSpacePoint o = HalfSpacePoint::origin(g.d);
    return busemann(x, apply(invert(g), o), o);
}

double semiconjugacy_residual(const FlowSystem& flow, const PhasePoint& p, double t) {
    EvolveResult r = evolve(flow, p, t);
    double before = factor_project(p).hopf_time;
    double after = factor_project(r.p).hopf_time;
    // after = before + t - shift(gamma) at the evolved forward endpoint
    return std::abs(after - before - t + hopf_shift(r.word, r.p.x));
}

CorrelationSeries correlation(const FlowSystem& flow, const Observable& phi,
                              const Observable& psi, const std::vector<double>& times,
                              long long n_samples, std::uint64_t seed, int threads) {
    if (times.empty()) throw validation_error("correlation needs at least one time");
    for (std::size_t k = 0; k + 1 < times.size(); ++k)
        if (!(times[k] < times[k + 1]))
            throw validation_error("correlation times must be strictly increasing");
    if (times.front() < 0.0) throw validation_error("correlation times must be nonnegative");
    if (n_samples < kBatches) throw validation_error("need at least 20 samples");
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 0) threads = 1;

    int nt = static_cast<int>(times.size());
    struct Batch {
        double su = 0;
        std::vector<double> sw, suw;
        long long n = 0, dropped = 0, rejects = 0, attempts = 0;
    };
    std::vector<Batch> batches(kBatches);
    for (auto& b : batches) {
        b.sw.assign(nt, 0.0);
        b.suw.assign(nt, 0.0);
    }

    auto run_batch = [&](int bi) {
        Batch& b = batches[bi];
        long long lo = n_samples * bi / kBatches, hi = n_samples * (bi + 1) / kBatches;
        std::vector<double> w(nt);
        for (long long i = lo; i < hi; ++i) {
            Rng rng(splitmix64(seed ^ (0x5851f42d4c957f2dULL * (i + 1))));
            PhasePoint p;
            long long esc0 = 0, att0 = 0;
            double rs = 0, rq = 0;
            long long rc = 0;
            if (!draw_point(flow, rng, p, esc0, att0, rs, rq, rc)) {
                ++b.dropped;
                continue;
            }
            b.rejects += esc0;
            b.attempts += att0;
            double u = phi(p);
            bool ok = true;
            PhasePoint cur = p;
            for (int k = 0; k < nt; ++k) {
                double dt = k == 0 ? times[0] : times[k] - times[k - 1];
                try {
                    cur = evolve(flow, cur, dt).p;
                } catch (const Error&) {
                    ok = false;
                    break;
                }
                w[k] = psi(cur);
            }
            if (!ok) {
                ++b.dropped;
                continue;
            }
            b.su += u;
            for (int k = 0; k < nt; ++k) {
                b.sw[k] += w[k];
                b.suw[k] += u * w[k];
            }
            ++b.n;
        }
    };

    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < std::min(threads, kBatches); ++t)
        pool.emplace_back([&] {
            for (int bi = next.fetch_add(1); bi < kBatches; bi = next.fetch_add(1))
                run_batch(bi);
        });
    for (auto& th : pool) th.join();

    CorrelationSeries out;
    out.times = times;
    out.rho.assign(nt, 0.0);
    out.stderrs.assign(nt, 0.0);
    double su = 0;
    long long n = 0, dropped = 0, rejects = 0, attempts = 0;
    std::vector<double> sw(nt, 0.0), suw(nt, 0.0);
    for (const auto& b : batches) {
        su += b.su;
        n += b.n;
        dropped += b.dropped;
        rejects += b.rejects;
        attempts += b.attempts;
        for (int k = 0; k < nt; ++k) {
            sw[k] += b.sw[k];
            suw[k] += b.suw[k];
        }
    }
    if (n <= 0) throw escape_error("every correlation sample escaped");
    out.sample_count = n;
    out.escape_rate =
        static_cast<double>(dropped + rejects) / static_cast<double>(attempts + dropped);
    for (int k = 0; k < nt; ++k) {
        out.rho[k] = suw[k] / n - (su / n) * (sw[k] / n);
        // batch means
        double bm = 0, bs = 0;
        int used = 0;
        std::vector<double> vals;
        for (const auto& b : batches) {
            if (b.n <= 0) continue;
            double v = b.suw[k] / b.n - (b.su / b.n) * (b.sw[k] / b.n);
            vals.push_back(v);
            ++used;
        }
        for (double v : vals) bm += v;
        bm /= used;
        for (double v : vals) bs += (v - bm) * (v - bm);
        out.stderrs[k] = used > 1 ? std::sqrt(bs / (used - 1) / used) : 0.0;
    }

    std::vector<double> fx, fy;
    for (int k = 0; k < nt; ++k) {
        if (times[k] <= 0.0) continue;
        if (std::abs(out.rho[k]) <= 3.0 * out.stderrs[k]) continue;
        out.window.push_back(k);
        fx.push_back(times[k]);
        fy.push_back(std::log(std::abs(out.rho[k])));
    }
    if (fx.size() < 3) {
        out.degenerate = true;
    } else {
        Fit f = lsq(fx, fy);
        out.fitted_eta = -f.slope;
        out.fit_quality = f.r2;
    }
    return out;
}

std::string correlation_to_csv(const CorrelationSeries& c) {
    std::ostringstream os;
    os << "t,rho,stderr\n";
    for (std::size_t k = 0; k < c.times.size(); ++k)
        os << format_double17(c.times[k]) << ',' << format_double17(c.rho[k]) << ','
           << format_double17(c.stderrs[k]) << '\n';
    return os.str();
}

std::string correlation_summary_json(const CorrelationSeries& c) {
    JValue j = JValue::object();
    j["fitted_eta"] = c.fitted_eta;
    j["fit_quality"] = c.fit_quality;
    j["sample_count"] = c.sample_count;
    j["escape_rate"] = c.escape_rate;
    j["degenerate"] = c.degenerate;
    JValue win = JValue::array();
    for (int k : c.window) win.push_back(c.times[static_cast<std::size_t>(k)]);
    j["window"] = std::move(win);
    return j.dump() + "\n";
}

} // namespace cuspflow
