#pragma once

// Shared test oracles: exact rational 2x2 Moebius arithmetic for d=1,
// finite differences, random map generation, and a standalone hyperbolic
// distance formula used as an independent reference.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>

#include "cuspflow/boundary.hpp"
#include "cuspflow/group.hpp"

namespace testutil {

using cuspflow::BoundaryPoint;
using cuspflow::HalfSpacePoint;
using cuspflow::Mat;
using cuspflow::Metric;
using cuspflow::MobiusMap;
using cuspflow::Vec;

// --- exact rationals -------------------------------------------------------

struct Frac {
    long long n = 0, d = 1;
    Frac() = default;
    Frac(long long nn, long long dd = 1) : n(nn), d(dd) { reduce(); }
    void reduce() {
        if (d < 0) { n = -n; d = -d; }
        long long g = std::gcd(n < 0 ? -n : n, d);
        if (g > 1) { n /= g; d /= g; }
    }
    double value() const { return double(n) / double(d); }
    friend Frac operator+(Frac a, Frac b) { return Frac(a.n * b.d + b.n * a.d, a.d * b.d); }
    friend Frac operator*(Frac a, Frac b) { return Frac(a.n * b.n, a.d * b.d); }
    friend Frac operator/(Frac a, Frac b) { return Frac(a.n * b.d, a.d * b.n); }
};

// 2x2 integer-matrix Moebius map on the rationals; oracle for d=1 maps.
struct RatMoebius {
    long long a, b, c, d;
    bool maps_to_infinity(Frac x) const { return c * x.n + d * x.d == 0; }
    Frac apply(Frac x) const {
        return Frac(a * x.n + b * x.d, c * x.n + d * x.d);
    }
    RatMoebius mul(const RatMoebius& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d,
                c * o.a + d * o.c, c * o.b + d * o.d};
    }
};

// --- finite differences ----------------------------------------------------

inline double fd_deriv(const MobiusMap& m, const Vec& x, const Vec& e, double step = 1e-6) {
    using cuspflow::apply;
    Vec xp = x + step * e, xm = x - step * e;
    Vec gp = apply(m, BoundaryPoint::at(xp)).v;
    Vec gm = apply(m, BoundaryPoint::at(xm)).v;
    return (gp - gm).norm() / (2.0 * step);
}

// --- random data -----------------------------------------------------------

inline Mat random_orthogonal(int d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (d == 1) return Mat::Constant(1, 1, u(rng) < 0.5 ? 1.0 : -1.0);
    Mat G(d, d);
    std::normal_distribution<double> g;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) G(i, j) = g(rng);
    Eigen::HouseholderQR<Mat> qr(G);
    Mat Q = qr.householderQ();
    if (u(rng) < 0.5) Q.col(0) *= -1.0; // cover both components of O(d)
    return Q;
}

inline Vec random_vec(int d, std::mt19937_64& rng, double radius = 3.0) {
    std::uniform_real_distribution<double> u(-radius, radius);
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = u(rng);
    return v;
}

inline MobiusMap random_inversive(int d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uh(0.5, 2.0);
    Vec p = random_vec(d, rng), q = random_vec(d, rng);
    while ((p - q).norm() < 0.5) q = random_vec(d, rng);
    return MobiusMap::inversive(p, q, uh(rng), random_orthogonal(d, rng));
}

inline bool map_close(const MobiusMap& a, const MobiusMap& b, double tol) {
    if (a.kind != b.kind || a.d != b.d) return false;
    if (a.kind == MobiusMap::Kind::inversive)
        return (a.p - b.p).norm() <= tol && (a.p_inv - b.p_inv).norm() <= tol &&
               std::abs(a.h - b.h) <= tol && (a.A - b.A).norm() <= tol;
    return std::abs(a.scale - b.scale) <= tol && (a.b - b.b).norm() <= tol &&
           (a.A - b.A).norm() <= tol;
}

// --- shared group fixtures -------------------------------------------------

// Principal congruence-type lattice generated by x -> x+2 and x -> x/(2x+1),
// single cusp chart at infinity.
inline cuspflow::GroupModel gamma2() {
    using cuspflow::CuspChart;
    using cuspflow::GroupModel;
    GroupModel g;
    g.d = 1;
    g.labels = {"T", "S"};
    g.generators = {MobiusMap::from_matrix2(1, 2, 0, 1),
                    MobiusMap::from_matrix2(1, 0, 2, 1)};
    g.free_group = true;
    CuspChart c;
    c.p = BoundaryPoint::infinity(1);
    c.g = MobiusMap::identity(1);
    c.rank = 1;
    c.domain_min = Vec::Zero(1);
    c.domain_max = Vec::Constant(1, 2.0);
    c.lattice = {{MobiusMap::translation(Vec::Constant(1, 2.0)), {1}}};
    g.cusps = {c};
    return g;
}

// Same group with a second chart at the cusp 0, chart map x -> -1/x.
inline cuspflow::GroupModel gamma2_two_cusps() {
    using cuspflow::CuspChart;
    cuspflow::GroupModel g = gamma2();
    CuspChart c;
    c.p = BoundaryPoint::at1(0.0);
    c.g = MobiusMap::from_matrix2(0, -1, 1, 0);
    c.rank = 1;
    c.domain_min = Vec::Constant(1, -1.0);
    c.domain_max = Vec::Constant(1, 1.0);
    // chart-side lattice gSg^{-1} = translation by -2; group word is S
    c.lattice = {{MobiusMap::translation(Vec::Constant(1, -2.0)), {2}}};
    g.cusps.push_back(c);
    return g;
}

// --- independent hyperbolic distance --------------------------------------

inline double hyp_dist_ref(const HalfSpacePoint& x, const HalfSpacePoint& y) {
    double n2 = (x.base - y.base).squaredNorm() + (x.height - y.height) * (x.height - y.height);
    return std::acosh(1.0 + n2 / (2.0 * x.height * y.height));
}

} // namespace testutil
