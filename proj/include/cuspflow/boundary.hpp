#pragma once

#include <Eigen/Dense>

#include "cuspflow/errors.hpp"

namespace cuspflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Module-level tolerances; config may override copies of these downstream.
struct Tol {
    static constexpr double structural = 1e-10;
    static constexpr double analytic = 1e-8;
    static constexpr double finite_diff = 1e-6;
};

// Point of R^d together with the distinguished point at infinity.
struct BoundaryPoint {
    bool inf = false;
    Vec v; // valid iff !inf (still sized d when inf, contents ignored)

    static BoundaryPoint infinity(int d) {
        BoundaryPoint x;
        x.inf = true;
        x.v = Vec::Zero(d);
        return x;
    }
    static BoundaryPoint at(Vec coords) {
        BoundaryPoint x;
        x.v = std::move(coords);
        return x;
    }
    static BoundaryPoint at1(double c) { return at(Vec::Constant(1, c)); }

    int dim() const { return static_cast<int>(v.size()); }
};

// Euclidean distance on R^d cup {inf}: infinite when exactly one argument is inf.
double boundary_dist(const BoundaryPoint& a, const BoundaryPoint& b);

// Upper half-space point (base, height), height > 0.
struct HalfSpacePoint {
    Vec base;
    double height = 1.0;

    static HalfSpacePoint origin(int d) { return {Vec::Zero(d), 1.0}; }
};

enum class Metric { euclidean, spherical };

// A conformal transformation of R^d cup {inf}. Two normal forms:
//   inversive:  x -> h * A * (x - p_inv)/|x - p_inv|^2 + p      (p = m(inf), p_inv = m^{-1}(inf))
//   affine:     x -> scale * A * x + b                          (fixes inf)
// with A orthogonal. The stored affine translation is a full d-vector; cusp
// stabilizers in block form (A, R, b_k) are built by the factory below.
struct MobiusMap {
    enum class Kind { inversive, affine };
    Kind kind = Kind::affine;
    int d = 1;

    // inversive fields
    Vec p, p_inv;
    double h = 1.0;
    Mat A; // d x d orthogonal (shared by both variants)

    // affine fields
    Vec b;
    double scale = 1.0;

    static MobiusMap identity(int d);
    static MobiusMap inversive(Vec p, Vec p_inv, double h, Mat A);
    static MobiusMap affine(Mat A, Vec b, double scale = 1.0);
    // Block form: first d-k coordinates rotated by Ablock, last k mapped z -> Rblock z + bk.
    static MobiusMap stabilizer(const Mat& Ablock, const Mat& Rblock, const Vec& bk);
    static MobiusMap translation(Vec t);
    // d=1 fractional linear map from a real 2x2 matrix (det != 0).
    static MobiusMap from_matrix2(double a, double b, double c, double dd);

    bool is_identity(double tol = Tol::structural) const;
};

BoundaryPoint apply(const MobiusMap& m, const BoundaryPoint& x);
HalfSpacePoint apply(const MobiusMap& m, const HalfSpacePoint& z);

// Conformal distortion |m'(x)| in the requested metric. Throws pole error for
// euclidean evaluation at the inversive pole.
double deriv(const MobiusMap& m, const BoundaryPoint& x, Metric metric);

// Full Jacobian at a finite non-pole point (scale times orthogonal).
Mat jacobian(const MobiusMap& m, const Vec& x);

MobiusMap compose(const MobiusMap& m1, const MobiusMap& m2);
MobiusMap invert(const MobiusMap& m);

// Busemann cocycle beta_x(z, z2) = lim_t d(z, x_t) - d(z2, x_t) along a ray to x.
double busemann(const BoundaryPoint& x, const HalfSpacePoint& z, const HalfSpacePoint& z2);

// Directional derivative of log|m'| at x in unit direction e:
// -2 <x - xi, e> / |x - xi|^2 with xi the pole; 0 for affine maps.
double grad_log_deriv(const MobiusMap& m, const BoundaryPoint& x, const Vec& e);

} // namespace cuspflow
