#include "cuspflow/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>

namespace cuspflow {

namespace {

using cd = std::complex<double>;

// --- node stencils ---------------------------------------------------------

struct Stencil {
    int j0 = 0, j1 = 0;
    double c0 = 1.0, c1 = 0.0; // c0 + c1 = 1
};

Stencil locate(const Discretization& disc, const Vec& y) {
    Stencil st;
    const int d = disc.sys.d;
    if (d == 1) {
        const auto& nodes = disc.nodes;
        double t = y[0];
        int n = static_cast<int>(nodes.size());
        if (t <= nodes.front()[0]) {
            st.j0 = st.j1 = 0;
            return st;
        }
        if (t >= nodes.back()[0]) {
            st.j0 = st.j1 = n - 1;
            return st;
        }
        int lo = 0, hi = n - 1;
        while (hi - lo > 1) {
            int mid = (lo + hi) / 2;
            (nodes[mid][0] <= t ? lo : hi) = mid;
        }
        double x0 = nodes[lo][0], x1 = nodes[hi][0];
        st.j0 = lo;
        st.j1 = hi;
        st.c1 = (t - x0) / (x1 - x0);
        st.c0 = 1.0 - st.c1;
        return st;
    }
    // d >= 2: nearest node of the per-axis uniform lattice
    long long idx = 0;
    for (int a = 0; a < d; ++a) {
        int m = disc.grid_dims[a];
        double lo = disc.sys.dom_min[0][a], hi = disc.sys.dom_max[0][a];
        int k = 0;
        if (m > 1) {
            double step = (hi - lo) / (m - 1);
            k = std::clamp(static_cast<int>(std::llround((y[a] - lo) / step)), 0, m - 1);
        }
        idx = idx * m + k;
    }
    st.j0 = st.j1 = static_cast<int>(idx);
    st.c0 = 1.0;
    st.c1 = 0.0;
    return st;
}

// first-order difference at y over a fixed fraction of the domain width, so
// the stencil coefficients (and the operator norm) stay mesh-independent
Stencil deriv_stencil(const Discretization& disc, const Vec& y) {
    if (disc.sys.d != 1)
        throw validation_error("derivative tail weights require dimension 1");
    double width = disc.sys.dom_max[0][0] - disc.sys.dom_min[0][0];
    double h0 = width / 256.0;
    int n = static_cast<int>(disc.nodes.size());
    auto nearest = [&](double t) {
        Stencil st = locate(disc, Vec::Constant(1, t));
        return st.c1 > 0.5 ? st.j1 : st.j0;
    };
    Stencil st;
    st.j0 = nearest(y[0]);
    st.j1 = nearest(y[0] + h0 <= disc.sys.dom_max[0][0] ? y[0] + h0 : y[0] - h0);
    if (st.j1 == st.j0) st.j1 = st.j0 + (st.j0 + 1 < n ? 1 : -1);
    double dx = disc.nodes[st.j1][0] - disc.nodes[st.j0][0];
    st.c0 = -1.0 / dx;
    st.c1 = 1.0 / dx;
    return st;
}

Stencil tail_stencil(const Discretization& disc, const TailWeight& t) {
    if (t.order == 0) return locate(disc, t.point);
    if (t.order == 1) return deriv_stencil(disc, t.point);
    throw validation_error("tail weights support orders 0 and 1 only");
}

// --- power iteration -------------------------------------------------------

double power_real(const Eigen::MatrixXd& M, Eigen::VectorXd& v, double tol, int max_iter,
                  int* iters_out = nullptr) {
    const int n = static_cast<int>(M.rows());
    if (v.size() != n) v = Eigen::VectorXd::Ones(n);
    v /= v.norm();
    double lam = 0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd w = M * v;
        lam = v.dot(w);
        double resid = (w - lam * v).lpNorm<Eigen::Infinity>();
        double nw = w.norm();
        if (nw == 0.0) {
            if (iters_out) *iters_out = it;
            return 0.0;
        }
        v = w / nw;
        if (resid <= tol * std::max(std::abs(lam), 1e-300)) {
            if (iters_out) *iters_out = it;
            return lam;
        }
    }
    throw convergence_error("power iteration did not converge");
}

cd power_complex(const Eigen::MatrixXcd& M, Eigen::VectorXcd& v, double tol, int max_iter,
                 int* iters_out = nullptr) {
    const int n = static_cast<int>(M.rows());
    if (v.size() != n) {
        v = Eigen::VectorXcd::Ones(n);
        for (int i = 0; i < n; ++i) v[i] += cd(0.0, 1e-3 * ((i * 7919) % 101));
    }
    v /= v.norm();
    cd lam = 0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXcd w = M * v;
        lam = v.dot(w); // Eigen dot conjugates the left factor
        double resid = (w - lam * v).lpNorm<Eigen::Infinity>();
        double nw = w.norm();
        if (nw == 0.0) {
            if (iters_out) *iters_out = it;
            return 0.0;
        }
        v = w / nw;
        if (resid <= tol * std::max(std::abs(lam), 1e-300)) {
            if (iters_out) *iters_out = it;
            return lam;
        }
    }
    throw convergence_error("power iteration did not converge");
}

// modulus of the dominant eigenvalue by averaged norm growth; never throws
double modulus_estimate(const Eigen::MatrixXcd& M, int max_iter = 600) {
    const int n = static_cast<int>(M.rows());
    // real start keeps the estimate exactly symmetric under conjugation
    Eigen::VectorXcd z = Eigen::VectorXcd::Ones(n);
    for (int i = 0; i < n; ++i) z[i] += 1e-3 * ((i * 31) % 97);
    z /= z.norm();
    std::vector<double> logs;
    for (int it = 0; it < max_iter; ++it) {
        z = M * z;
        double nz = z.norm();
        if (nz == 0.0) return 0.0;
        logs.push_back(std::log(nz));
        z /= nz;
    }
    int w = std::min<int>(200, static_cast<int>(logs.size()) / 2);
    double s = std::accumulate(logs.end() - w, logs.end(), 0.0);
    return std::exp(s / w);
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// least squares slope of y against x
double lsq_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double n = static_cast<double>(x.size());
    double sx = std::accumulate(x.begin(), x.end(), 0.0);
    double sy = std::accumulate(y.begin(), y.end(), 0.0);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double den = n * sxx - sx * sx;
    return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

// --- cached real assembly for exponent sweeps ------------------------------

struct WeightCache {
    int n = 0;
    struct Entry {
        int32_t i, j0, j1;
        double c0, c1, logd;
    };
    std::vector<Entry> entries;
    const Discretization* disc = nullptr;

    explicit WeightCache(const Discretization& dc) : disc(&dc) {
        n = static_cast<int>(dc.nodes.size());
        entries.reserve(dc.sys.branches.size() * dc.nodes.size());
        for (const auto& b : dc.sys.branches) {
            for (int i = 0; i < n; ++i) {
                BoundaryPoint x = BoundaryPoint::at(dc.nodes[i]);
                double dv = deriv(b.map, x, Metric::euclidean);
                Vec y = apply(b.map, x).v;
                Stencil st = locate(dc, y);
                entries.push_back({static_cast<int32_t>(i), static_cast<int32_t>(st.j0),
                                   static_cast<int32_t>(st.j1), st.c0, st.c1, std::log(dv)});
            }
        }
    }

    Eigen::MatrixXd matrix(double a) const {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
        for (const auto& e : entries) {
            double w = std::exp(a * e.logd);
            M(e.i, e.j0) += w * e.c0;
            if (e.c1 != 0.0) M(e.i, e.j1) += w * e.c1;
        }
        for (const auto& t : disc->tails) {
            Stencil st = tail_stencil(*disc, t);
            for (int i = 0; i < n; ++i) {
                double w = t.weight(cd(a, 0.0), disc->nodes[i]).real();
                M(i, st.j0) += w * st.c0;
                if (st.c1 != 0.0) M(i, st.j1) += w * st.c1;
            }
        }
        return M;
    }
};

double bisect_delta(const std::function<double(double)>& lam, const DeltaOptions& opt,
                    double* bracket_out = nullptr) {
    double lo = opt.a_lo, hi = opt.a_hi;
    double flo = std::log(lam(lo)), fhi = std::log(lam(hi));
    if (!(flo > 0.0) || !(fhi < 0.0))
        throw bracket_error("log lambda(a) does not change sign on the bracket");
    while (hi - lo > opt.tol) {
        double mid = 0.5 * (lo + hi);
        double f = std::log(lam(mid));
        if (f == 0.0) {
            lo = hi = mid;
            break;
        }
        (f > 0.0 ? lo : hi) = mid;
    }
    if (bracket_out) *bracket_out = hi - lo;
    return 0.5 * (lo + hi);
}

double estimate_delta_cached(const WeightCache& cache, const DeltaOptions& opt,
                             double* bracket_out = nullptr) {
    Eigen::VectorXd warm;
    auto lam = [&](double a) { return power_real(cache.matrix(a), warm, 1e-12, 200000); };
    return bisect_delta(lam, opt, bracket_out);
}

} // namespace

// --- discretization --------------------------------------------------------

Discretization discretize(const BranchSystem& sys, const DiscretizationParams& par) {
    if (sys.dom_min.size() != 1)
        throw validation_error("spectral discretization expects a single domain; induce first");
    for (const auto& b : sys.branches)
        if (b.src != 0 || b.tgt != 0)
            throw validation_error("branch crosses domains; induce first");

    Discretization disc;
    disc.sys.d = sys.d;
    disc.sys.dom_min = sys.dom_min;
    disc.sys.dom_max = sys.dom_max;
    disc.delta_hint = par.delta_hint;
    for (const auto& b : sys.branches) {
        double sup = branch_sup_deriv(sys, b);
        if (sup < par.truncation_floor) {
            disc.truncated_mass += std::pow(sup, par.delta_hint);
            continue;
        }
        disc.sys.branches.push_back(b);
        disc.sup_derivs.push_back(sup);
    }
    if (disc.sys.branches.empty())
        throw truncation_error("no branches survive the sup-derivative floor");

    const int d = sys.d;
    const Vec& lo = sys.dom_min[0];
    const Vec& hi = sys.dom_max[0];
    if (d == 1) {
        int n = std::max(par.nodes, 3);
        disc.nodes.reserve(n);
        double prev = lo[0];
        for (int k = 0; k < n; ++k) {
            double t = static_cast<double>(k) / (n - 1);
            if (par.graded) t = t * t * (3.0 - 2.0 * t);
            double x = lo[0] + (hi[0] - lo[0]) * t;
            disc.nodes.push_back(Vec::Constant(1, x));
            if (k > 0) disc.mesh = std::max(disc.mesh, x - prev);
            prev = x;
        }
    } else {
        int m = std::max(2, static_cast<int>(std::lround(std::pow(double(par.nodes), 1.0 / d))));
        disc.grid_dims.assign(d, m);
        std::vector<int> idx(d, 0);
        long long total = 1;
        for (int a = 0; a < d; ++a) total *= m;
        disc.nodes.reserve(total);
        for (long long flat = 0; flat < total; ++flat) {
            long long r = flat;
            Vec x(d);
            for (int a = d - 1; a >= 0; --a) {
                int k = static_cast<int>(r % m);
                r /= m;
                x[a] = lo[a] + (hi[a] - lo[a]) * k / (m - 1);
            }
            disc.nodes.push_back(x);
        }
        for (int a = 0; a < d; ++a)
            disc.mesh = std::max(disc.mesh, (hi[a] - lo[a]) / (m - 1));
    }
    return disc;
}

std::complex<double> hurwitz_zeta(std::complex<double> s, double q) {
    // Euler-Maclaurin with a short explicit head; remainder O(|s|^6 q^{-Re s - 5})
    cd sum = 0;
    int K = q >= 100.0 ? 0 : 64;
    for (int k = 0; k < K; ++k) sum += std::pow(q + k, -s);
    double Q = q + K;
    cd qs = std::pow(Q, -s);
    sum += qs * Q / (s - 1.0);
    sum += 0.5 * qs;
    sum += s * qs / (12.0 * Q);
    sum -= s * (s + 1.0) * (s + 2.0) * qs / (720.0 * Q * Q * Q);
    sum += s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * qs / (30240.0 * std::pow(Q, 5));
    return sum;
}

Discretization discretize_gauss(int n_max, const DiscretizationParams& par) {
    Discretization disc = discretize(gauss_system(1, n_max), par);
    // dropped branches map x near 0: u(1/(n+x)) = u(0) + u'(0)/(n+x) + O(n^-2),
    // giving a zeroth and a first Hurwitz moment
    TailWeight tail;
    tail.point = Vec::Zero(1);
    tail.weight = [n_max](cd a, const Vec& x) { return hurwitz_zeta(2.0 * a, n_max + 1.0 + x[0]); };
    disc.tails.push_back(tail);
    TailWeight slope;
    slope.point = Vec::Zero(1);
    slope.order = 1;
    slope.weight = [n_max](cd a, const Vec& x) {
        return hurwitz_zeta(2.0 * a + 1.0, n_max + 1.0 + x[0]);
    };
    disc.tails.push_back(slope);
    return disc;
}

// --- operator assembly -----------------------------------------------------

OperatorMatrix assemble(const Discretization& disc, double delta, std::complex<double> s) {
    if (disc.sys.branches.empty() && disc.tails.empty())
        throw truncation_error("empty branch set");
    const int n = static_cast<int>(disc.nodes.size());
    OperatorMatrix op;
    op.s = s;
    op.a_total = delta + s.real();
    op.M = Eigen::MatrixXcd::Zero(n, n);
    const cd a = cd(delta, 0.0) + s;
    for (const auto& b : disc.sys.branches) {
        for (int i = 0; i < n; ++i) {
            BoundaryPoint x = BoundaryPoint::at(disc.nodes[i]);
            double dv = deriv(b.map, x, Metric::euclidean);
            cd w = std::exp(a * std::log(dv));
            Stencil st = locate(disc, apply(b.map, x).v);
            op.M(i, st.j0) += w * st.c0;
            if (st.c1 != 0.0) op.M(i, st.j1) += w * st.c1;
        }
    }
    for (const auto& t : disc.tails) {
        Stencil st = tail_stencil(disc, t);
        for (int i = 0; i < n; ++i) {
            cd w = t.weight(a, disc.nodes[i]);
            op.M(i, st.j0) += w * st.c0;
            if (st.c1 != 0.0) op.M(i, st.j1) += w * st.c1;
        }
    }
    return op;
}

// --- spectra ----------------------------------------------------------------

Spectrum leading_spectrum(const OperatorMatrix& op, double tol, int max_iter) {
    Spectrum sp;
    const int n = static_cast<int>(op.M.rows());
    int it1 = 0, it2 = 0;
    if (op.s.imag() == 0.0) {
        Eigen::MatrixXd Mr = op.M.real();
        Eigen::VectorXd vr, vl;
        double lam = power_real(Mr, vr, tol, max_iter, &it1);
        power_real(Mr.transpose(), vl, tol, max_iter, &it2);
        sp.lambda = lam;
        sp.right = vr.cast<cd>();
        sp.left = vl.cast<cd>();
    } else {
        Eigen::VectorXcd vr, vl;
        cd lam = power_complex(op.M, vr, tol, max_iter, &it1);
        power_complex(op.M.adjoint(), vl, tol, max_iter, &it2);
        sp.lambda = lam;
        sp.right = vr;
        sp.left = vl;
    }
    sp.iterations = it1 + it2;

    // subdominant modulus: deflate the leading pair, track averaged norm growth
    double lam_abs = std::abs(sp.lambda);
    if (n > 1 && lam_abs > 0.0) {
        cd denom = sp.left.dot(sp.right);
        if (std::abs(denom) > 1e-14) {
            auto deflate = [&](Eigen::VectorXcd w) {
                w -= sp.right * (sp.left.dot(w) / denom);
                return w;
            };
            Eigen::VectorXcd z = Eigen::VectorXcd::Ones(n);
            for (int i = 0; i < n; ++i) z[i] += cd(1e-3 * ((i * 13) % 89), 1e-3 * ((i * 7) % 83));
            z = deflate(z);
            double nz = z.norm();
            if (nz > 0.0) {
                z /= nz;
                std::vector<double> logs;
                double est = 0.0, prev_est = -1.0;
                for (int it = 0; it < 6000; ++it) {
                    z = deflate(op.M * z);
                    double nn = z.norm();
                    if (nn == 0.0) {
                        est = 0.0;
                        break;
                    }
                    logs.push_back(std::log(nn));
                    z /= nn;
                    if (static_cast<int>(logs.size()) >= 80 && it % 40 == 0) {
                        double s40 = std::accumulate(logs.end() - 40, logs.end(), 0.0) / 40.0;
                        est = std::exp(s40);
                        if (prev_est >= 0.0 && std::abs(est - prev_est) <= 1e-10 * lam_abs) break;
                        prev_est = est;
                    }
                }
                sp.gap = est / lam_abs;
            }
        }
    }
    return sp;
}

double lambda_at(const Discretization& disc, double a) {
    WeightCache cache(disc);
    Eigen::VectorXd v;
    return power_real(cache.matrix(a), v, 1e-12, 200000);
}

double estimate_delta(const Discretization& disc, const DeltaOptions& opt) {
    WeightCache cache(disc);
    return estimate_delta_cached(cache, opt);
}

DeltaEstimate estimate_delta_detailed(const Discretization& disc, const DeltaOptions& opt) {
    DeltaEstimate out;
    WeightCache cache(disc);
    out.delta = estimate_delta_cached(cache, opt, &out.bracket);

    // sensitivity: drop the weakest tenth of the kept branches and re-estimate
    std::size_t total = disc.sys.branches.size();
    std::size_t n_drop = std::max<std::size_t>(1, total / 10);
    if (n_drop >= total) n_drop = total - 1;
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return disc.sup_derivs[a] < disc.sup_derivs[b];
    });
    std::vector<bool> drop(total, false);
    for (std::size_t r = 0; r < n_drop; ++r) drop[order[r]] = true;
    Discretization trimmed = disc;
    trimmed.sys.branches.clear();
    trimmed.sup_derivs.clear();
    for (std::size_t i = 0; i < total; ++i) {
        if (drop[i]) {
            trimmed.truncated_mass += std::pow(disc.sup_derivs[i], disc.delta_hint);
            continue;
        }
        trimmed.sys.branches.push_back(disc.sys.branches[i]);
        trimmed.sup_derivs.push_back(disc.sup_derivs[i]);
    }
    if (!trimmed.sys.branches.empty() &&
        trimmed.sys.branches.size() < disc.sys.branches.size()) {
        try {
            out.floor_sensitivity = std::abs(estimate_delta(trimmed, opt) - out.delta);
        } catch (const Error&) {
            out.floor_sensitivity = std::numeric_limits<double>::infinity();
        }
    }
    return out;
}

double estimate_delta_ulam(const BranchSystem& sys, int bins, double truncation_floor,
                           const DeltaOptions& opt) {
    if (sys.d != 1) throw validation_error("the binned cross-check is d=1 only");
    if (sys.dom_min.size() != 1)
        throw validation_error("the binned cross-check expects a single domain");
    double lo = sys.dom_min[0][0], hi = sys.dom_max[0][0];
    double step = (hi - lo) / bins;
    const int sub = 4; // sample points per bin

    struct Entry {
        int32_t i, j;
        double logd;
    };
    std::vector<Entry> entries;
    for (const auto& b : sys.branches) {
        if (branch_sup_deriv(sys, b) < truncation_floor) continue;
        for (int i = 0; i < bins; ++i) {
            for (int k = 0; k < sub; ++k) {
                double x = lo + step * (i + (k + 0.5) / sub);
                BoundaryPoint bx = BoundaryPoint::at1(x);
                double dv = deriv(b.map, bx, Metric::euclidean);
                double y = apply(b.map, bx).v[0];
                int j = std::clamp(static_cast<int>((y - lo) / step), 0, bins - 1);
                entries.push_back({static_cast<int32_t>(i), static_cast<int32_t>(j), std::log(dv)});
            }
        }
    }
    if (entries.empty()) throw truncation_error("no branches survive the sup-derivative floor");

    Eigen::VectorXd warm;
    auto lam = [&](double a) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(bins, bins);
        for (const auto& e : entries) M(e.i, e.j) += std::exp(a * e.logd) / sub;
        return power_real(M, warm, 1e-12, 200000);
    };
    return bisect_delta(lam, opt);
}

SpectralReport spectral_report(const Discretization& disc, std::optional<double> delta) {
    SpectralReport rep;
    rep.delta = delta ? *delta : estimate_delta(disc);
    auto op = assemble(disc, rep.delta, 0.0);
    auto sp = leading_spectrum(op);
    rep.lambda = sp.lambda.real();
    rep.gap = sp.gap;
    rep.f = sp.right.real().cwiseAbs();
    double fmax = rep.f.maxCoeff();
    if (fmax > 0.0) rep.f /= fmax;
    rep.mass = sp.left.real().cwiseAbs();
    double total = rep.mass.sum();
    if (total > 0.0) rep.mass /= total;
    return rep;
}

// --- measure diagnostics ----------------------------------------------------

MeasureDiagnostics measure_diagnostics(const Discretization& disc, const SpectralReport& rep,
                                       const std::vector<Vec>& cusp_points, int min_ball_nodes) {
    MeasureDiagnostics diag;
    const int n = static_cast<int>(disc.nodes.size());
    const Vec& lo = disc.sys.dom_min[0];
    const Vec& hi = disc.sys.dom_max[0];
    double diam = (hi - lo).norm();
    const double atom_eps = 1e-12;

    int carrying = 0;
    for (int i = 0; i < n; ++i)
        if (rep.mass[i] > atom_eps) ++carrying;
    if (carrying < min_ball_nodes) diag.resolution_warning = true;

    auto ball = [&](const Vec& c, double r, int* count) {
        double m = 0;
        int cnt = 0;
        for (int i = 0; i < n; ++i) {
            if ((disc.nodes[i] - c).norm() <= r) {
                m += rep.mass[i];
                if (rep.mass[i] > atom_eps) ++cnt;
            }
        }
        if (count) *count = cnt;
        return m;
    };

    // doubling over the heaviest nodes and dyadic radii
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return rep.mass[a] > rep.mass[b]; });
    int centers = std::min(n, 40);
    bool any_ratio = false;
    for (int ci = 0; ci < centers; ++ci) {
        const Vec& c = disc.nodes[order[ci]];
        if (rep.mass[order[ci]] <= atom_eps) break;
        for (int k = 0; k <= 8; ++k) {
            double r = diam / 4.0 * std::pow(0.5, k);
            int cnt = 0;
            double inner = ball(c, r, &cnt);
            if (cnt < min_ball_nodes || inner <= 0.0) continue;
            any_ratio = true;
            diag.doubling_max = std::max(diag.doubling_max, ball(c, 2.0 * r, nullptr) / inner);
        }
    }
    if (!any_ratio) diag.resolution_warning = true;

    // cusp scaling regression
    for (const auto& p : cusp_points) {
        std::vector<double> xs, ys;
        for (int k = 1; k <= 12; ++k) {
            double r = diam / 2.0 * std::pow(0.5, k);
            int cnt = 0;
            double m = ball(p, r, &cnt);
            if (cnt < min_ball_nodes || m <= 0.0) continue;
            xs.push_back(std::log(r));
            ys.push_back(std::log(m));
        }
        if (xs.size() >= 3) diag.cusp_slopes.push_back(lsq_slope(xs, ys));
    }
    diag.cusp_slope = median(diag.cusp_slopes);

    // boundary neighborhood mass ratios
    auto bdist = [&](const Vec& x) {
        double m = 1e300;
        for (int a = 0; a < disc.sys.d; ++a) m = std::min({m, x[a] - lo[a], hi[a] - x[a]});
        return m;
    };
    for (int k = 0; k <= 10; ++k) {
        double r = diam / 4.0 * std::pow(0.5, k);
        double m_half = 0, m_full = 0;
        int cnt = 0;
        for (int i = 0; i < n; ++i) {
            double bd = bdist(disc.nodes[i]);
            if (bd < r) m_full += rep.mass[i];
            if (bd < 0.5 * r) {
                m_half += rep.mass[i];
                if (rep.mass[i] > atom_eps) ++cnt;
            }
        }
        if (cnt >= min_ball_nodes && m_full > 0.0)
            diag.boundary_ratio_sup = std::max(diag.boundary_ratio_sup, m_half / m_full);
    }
    return diag;
}

// --- L2 contraction probe ----------------------------------------------------

L2Probe l2_contraction_probe(const Discretization& disc, const SpectralReport& rep,
                             std::complex<double> s, int m_max, Eigen::VectorXcd v) {
    const int n = static_cast<int>(disc.nodes.size());
    L2Probe probe;

    // real normalization data at the real part of the exponent
    Eigen::VectorXd f_sig;
    double lam_sig;
    if (s.real() == 0.0) {
        f_sig = rep.f;
        lam_sig = rep.lambda;
    } else {
        auto op_sig = assemble(disc, rep.delta, cd(s.real(), 0.0));
        auto sp = leading_spectrum(op_sig);
        lam_sig = sp.lambda.real();
        f_sig = sp.right.real().cwiseAbs();
        f_sig /= f_sig.maxCoeff();
    }
    for (int i = 0; i < n; ++i) f_sig[i] = std::max(f_sig[i], 1e-300);

    auto op = assemble(disc, rep.delta, s);
    Eigen::MatrixXcd Mt = op.M;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Mt(i, j) *= f_sig[j] / (lam_sig * f_sig[i]);

    // discretized mu_E masses
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i)
        w[i] = rep.mass[i] * std::pow(1.0 + disc.nodes[i].squaredNorm(), rep.delta);
    w /= w.sum();

    if (v.size() == 0) {
        double mean = 0;
        for (int i = 0; i < n; ++i) mean += w[i] * disc.nodes[i][0];
        v = Eigen::VectorXcd(n);
        for (int i = 0; i < n; ++i) v[i] = disc.nodes[i][0] - mean;
    }

    // Lipschitz neighbor pairs for the b-norm proxy
    std::vector<std::pair<int, int>> pairs;
    if (disc.sys.d == 1) {
        for (int i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
    } else {
        const auto& dims = disc.grid_dims;
        std::vector<long long> stride(dims.size(), 1);
        for (int a = static_cast<int>(dims.size()) - 2; a >= 0; --a)
            stride[a] = stride[a + 1] * dims[a + 1];
        for (int i = 0; i < n; ++i) {
            long long r = i;
            for (std::size_t a = 0; a < dims.size(); ++a) {
                long long k = r / stride[a];
                r %= stride[a];
                if (k + 1 < dims[a]) pairs.emplace_back(i, i + static_cast<int>(stride[a]));
            }
        }
    }
    double babs = std::abs(s.imag());
    auto bnorm = [&](const Eigen::VectorXcd& u) {
        double sup = u.lpNorm<Eigen::Infinity>();
        double lip = 0;
        for (const auto& [i, j] : pairs) {
            double dx = (disc.nodes[i] - disc.nodes[j]).norm();
            if (dx > 0) lip = std::max(lip, std::abs(u[i] - u[j]) / dx);
        }
        return std::max(sup, lip / (1.0 + babs));
    };

    double v_norm = bnorm(v);
    Eigen::VectorXcd u = v;
    for (int m = 1; m <= m_max; ++m) {
        u = Mt * u;
        double l2 = 0;
        for (int i = 0; i < n; ++i) l2 += w[i] * std::norm(u[i]);
        probe.series.push_back(l2);
        if (v_norm > 0) probe.norm_proxy_max = std::max(probe.norm_proxy_max, bnorm(u) / v_norm);
    }

    // geometric rate from the second half of the series
    std::vector<double> xs, ys;
    for (std::size_t m = probe.series.size() / 2; m < probe.series.size(); ++m) {
        if (probe.series[m] <= 0) continue;
        xs.push_back(static_cast<double>(m));
        ys.push_back(std::log(probe.series[m]));
    }
    probe.beta = xs.size() >= 2 ? std::exp(lsq_slope(xs, ys)) : 1.0;
    return probe;
}

// --- resonance scan ----------------------------------------------------------

ResonanceScan resonance_scan(const Discretization& disc, double delta,
                             const std::vector<double>& sigmas, const std::vector<double>& bs) {
    ResonanceScan scan;
    const int n = static_cast<int>(disc.nodes.size());
    const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(n, n);
    for (double sigma : sigmas) {
        for (double b : bs) {
            ResonancePoint pt;
            pt.sigma = sigma;
            pt.b = b;
            auto op = assemble(disc, delta, cd(sigma, b));
            pt.radius = modulus_estimate(op.M);

            Eigen::MatrixXcd A = I - op.M;
            Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
            Eigen::VectorXcd z = Eigen::VectorXcd::Ones(n);
            for (int i = 0; i < n; ++i) z[i] += 1e-3 * ((i * 17) % 101);
            z /= z.norm();
            double rho = 0, prev = -1;
            for (int it = 0; it < 300; ++it) {
                Eigen::VectorXcd t = lu.adjoint().solve(z);
                Eigen::VectorXcd y = lu.solve(t);
                rho = y.norm();
                if (!(rho > 0) || !std::isfinite(rho)) {
                    rho = std::numeric_limits<double>::infinity();
                    break;
                }
                z = y / rho;
                if (prev > 0 && std::abs(rho - prev) <= 1e-8 * rho) break;
                prev = rho;
            }
            pt.min_sv = std::isfinite(rho) ? 1.0 / std::sqrt(rho) : 0.0;
            scan.field.push_back(pt);
        }
    }

    std::vector<double> svs;
    for (const auto& pt : scan.field) svs.push_back(pt.min_sv);
    double thresh = std::max(1e-9, 0.05 * median(svs));
    for (std::size_t i = 0; i < scan.field.size(); ++i)
        if (scan.field[i].min_sv < thresh) scan.flagged.push_back(static_cast<int>(i));

    double b_eps = 1e300;
    for (double b : bs)
        if (std::abs(b) > 1e-12) b_eps = std::min(b_eps, std::abs(b));
    if (b_eps == 1e300) b_eps = 0.0;
    double depth = 0;
    for (double sigma : sigmas) depth = std::max(depth, -sigma);
    double strip = depth;
    for (int idx : scan.flagged) {
        const auto& pt = scan.field[idx];
        if (std::abs(pt.b) > 0.5 * b_eps || b_eps == 0.0)
            if (std::abs(pt.b) > 1e-12) strip = std::min(strip, -pt.sigma);
    }
    scan.zero_free_strip = std::max(strip, 0.0);
    return scan;
}

std::string scan_to_csv(const ResonanceScan& scan) {
    std::ostringstream out;
    out.precision(12);
    out << "sigma,b,spectral_radius,min_singular_value\n";
    for (const auto& pt : scan.field)
        out << pt.sigma << "," << pt.b << "," << pt.radius << "," << pt.min_sv << "\n";
    return out.str();
}

} // namespace cuspflow
