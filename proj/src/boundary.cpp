#include "cuspflow/boundary.hpp"

#include <cmath>
#include <limits>

namespace cuspflow {

namespace {

Mat orthonormalize(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

bool same_point(const Vec& a, const Vec& b) {
    double tol = 1e-12 * (1.0 + a.norm() + b.norm());
    return (a - b).norm() <= tol;
}

void check_dims(const MobiusMap& m1, const MobiusMap& m2) {
    if (m1.d != m2.d)
        throw dimension_error("compose: dimension mismatch " + std::to_string(m1.d) +
                              " vs " + std::to_string(m2.d));
}

} // namespace

double boundary_dist(const BoundaryPoint& a, const BoundaryPoint& b) {
    if (a.inf && b.inf) return 0.0;
    if (a.inf || b.inf) return std::numeric_limits<double>::infinity();
    return (a.v - b.v).norm();
}

MobiusMap MobiusMap::identity(int d) {
    MobiusMap m;
    m.kind = Kind::affine;
    m.d = d;
    m.A = Mat::Identity(d, d);
    m.b = Vec::Zero(d);
    m.scale = 1.0;
    return m;
}

MobiusMap MobiusMap::inversive(Vec p, Vec p_inv, double h, Mat A) {
    MobiusMap m;
    m.kind = Kind::inversive;
    m.d = static_cast<int>(p.size());
    m.p = std::move(p);
    m.p_inv = std::move(p_inv);
    m.h = h;
    m.A = std::move(A);
    m.b = Vec::Zero(m.d);
    return m;
}

MobiusMap MobiusMap::affine(Mat A, Vec b, double scale) {
    MobiusMap m;
    m.kind = Kind::affine;
    m.d = static_cast<int>(b.size());
    m.A = std::move(A);
    m.b = std::move(b);
    m.scale = scale;
    return m;
}

MobiusMap MobiusMap::stabilizer(const Mat& Ablock, const Mat& Rblock, const Vec& bk) {
    int dy = static_cast<int>(Ablock.rows());
    int k = static_cast<int>(Rblock.rows());
    int d = dy + k;
    Mat A = Mat::Zero(d, d);
    if (dy > 0) A.topLeftCorner(dy, dy) = Ablock;
    if (k > 0) A.bottomRightCorner(k, k) = Rblock;
    Vec b = Vec::Zero(d);
    if (k > 0) b.tail(k) = bk;
    return affine(std::move(A), std::move(b), 1.0);
}

MobiusMap MobiusMap::translation(Vec t) {
    int d = static_cast<int>(t.size());
    return affine(Mat::Identity(d, d), std::move(t), 1.0);
}

MobiusMap MobiusMap::from_matrix2(double a, double b, double c, double dd) {
    double det = a * dd - b * c;
    if (det == 0.0) throw validation_error("from_matrix2: singular matrix");
    if (c == 0.0) {
        double s = a / dd;
        return affine(Mat::Constant(1, 1, s > 0 ? 1.0 : -1.0),
                      Vec::Constant(1, b / dd), std::abs(s));
    }
    // (ax+b)/(cx+d) = a/c - (det/c^2)/(x + d/c)
    Vec p = Vec::Constant(1, a / c);
    Vec pinv = Vec::Constant(1, -dd / c);
    double h = std::abs(det) / (c * c);
    Mat A = Mat::Constant(1, 1, det > 0 ? -1.0 : 1.0);
    return inversive(std::move(p), std::move(pinv), h, std::move(A));
}

bool MobiusMap::is_identity(double tol) const {
    if (kind != Kind::affine) return false;
    return std::abs(scale - 1.0) <= tol && b.norm() <= tol &&
           (A - Mat::Identity(d, d)).norm() <= tol;
}

BoundaryPoint apply(const MobiusMap& m, const BoundaryPoint& x) {
    if (!x.inf && x.dim() != m.d)
        throw dimension_error("apply: point dimension mismatch");
    if (m.kind == MobiusMap::Kind::affine) {
        if (x.inf) return BoundaryPoint::infinity(m.d);
        return BoundaryPoint::at(m.scale * (m.A * x.v) + m.b);
    }
    if (x.inf) return BoundaryPoint::at(m.p);
    Vec w = x.v - m.p_inv;
    double n2 = w.squaredNorm();
    if (n2 == 0.0) return BoundaryPoint::infinity(m.d);
    return BoundaryPoint::at(m.h * (m.A * w) / n2 + m.p);
}

HalfSpacePoint apply(const MobiusMap& m, const HalfSpacePoint& z) {
    if (m.kind == MobiusMap::Kind::affine)
        return {m.scale * (m.A * z.base) + m.b, m.scale * z.height};
    Vec w = z.base - m.p_inv;
    double D = w.squaredNorm() + z.height * z.height;
    return {m.h * (m.A * w) / D + m.p, m.h * z.height / D};
}

double deriv(const MobiusMap& m, const BoundaryPoint& x, Metric metric) {
    if (m.kind == MobiusMap::Kind::affine) {
        if (metric == Metric::euclidean) return m.scale;
        if (x.inf) return 1.0 / m.scale;
        BoundaryPoint gx = apply(m, x);
        return (1.0 + x.v.squaredNorm()) / (1.0 + gx.v.squaredNorm()) * m.scale;
    }
    if (metric == Metric::euclidean) {
        if (x.inf) return 0.0;
        double n2 = (x.v - m.p_inv).squaredNorm();
        if (n2 == 0.0) throw pole_error("deriv: euclidean derivative at the pole");
        return m.h / n2;
    }
    // spherical
    if (x.inf) return m.h / (1.0 + m.p.squaredNorm());
    double n2 = (x.v - m.p_inv).squaredNorm();
    if (n2 == 0.0) return (1.0 + m.p_inv.squaredNorm()) / m.h;
    BoundaryPoint gx = apply(m, x);
    return (1.0 + x.v.squaredNorm()) / (1.0 + gx.v.squaredNorm()) * m.h / n2;
}

Mat jacobian(const MobiusMap& m, const Vec& x) {
    if (m.kind == MobiusMap::Kind::affine) return m.scale * m.A;
    Vec w = x - m.p_inv;
    double n2 = w.squaredNorm();
    if (n2 == 0.0) throw pole_error("jacobian at the pole");
    Vec u = w / std::sqrt(n2);
    Mat refl = Mat::Identity(m.d, m.d) - 2.0 * u * u.transpose();
    return (m.h / n2) * (m.A * refl);
}

MobiusMap invert(const MobiusMap& m) {
    if (m.kind == MobiusMap::Kind::affine) {
        Mat At = m.A.transpose();
        return MobiusMap::affine(At, -(At * m.b) / m.scale, 1.0 / m.scale);
    }
    return MobiusMap::inversive(m.p_inv, m.p, m.h, m.A.transpose());
}

MobiusMap compose(const MobiusMap& m1, const MobiusMap& m2) {
    check_dims(m1, m2);
    int d = m1.d;
    bool a1 = m1.kind == MobiusMap::Kind::affine;
    bool a2 = m2.kind == MobiusMap::Kind::affine;
    if (a1 && a2) {
        Mat Q = orthonormalize(m1.A * m2.A);
        return MobiusMap::affine(Q, m1.scale * (m1.A * m2.b) + m1.b, m1.scale * m2.scale);
    }
    if (a1 && !a2) {
        Vec p = m1.scale * (m1.A * m2.p) + m1.b;
        return MobiusMap::inversive(std::move(p), m2.p_inv, m1.scale * m2.h,
                                    orthonormalize(m1.A * m2.A));
    }
    if (!a1 && a2) {
        MobiusMap inv2 = invert(m2);
        Vec q = inv2.scale * (inv2.A * m1.p_inv) + inv2.b;
        return MobiusMap::inversive(m1.p, std::move(q), m1.h / m2.scale,
                                    orthonormalize(m1.A * m2.A));
    }
    // inversive o inversive
    if (same_point(m1.p_inv, m2.p)) {
        // the composition fixes infinity
        Vec x0 = m2.p_inv + Vec::Unit(d, 0);
        BoundaryPoint bx0 = BoundaryPoint::at(x0);
        BoundaryPoint mid = apply(m2, bx0);
        double lambda = deriv(m1, mid, Metric::euclidean) * deriv(m2, bx0, Metric::euclidean);
        Mat Dg = jacobian(m1, mid.v) * jacobian(m2, x0);
        Mat Q = orthonormalize(Dg / lambda);
        Vec gx0 = apply(m1, mid).v;
        return MobiusMap::affine(Q, gx0 - lambda * (Q * x0), lambda);
    }
    MobiusMap inv2 = invert(m2);
    Vec p_g = apply(m1, BoundaryPoint::at(m2.p)).v;
    Vec pinv_g = apply(inv2, BoundaryPoint::at(m1.p_inv)).v;
    // evaluation point away from both poles
    Vec x0;
    double best = -1.0;
    for (int i = 0; i < d; ++i) {
        for (double sgn : {1.0, -1.0}) {
            Vec cand = pinv_g + sgn * Vec::Unit(d, i);
            double score = std::min((cand - m2.p_inv).norm(), 1.0);
            if (score > best) { best = score; x0 = cand; }
        }
    }
    BoundaryPoint bx0 = BoundaryPoint::at(x0);
    BoundaryPoint mid = apply(m2, bx0);
    double dg = deriv(m1, mid, Metric::euclidean) * deriv(m2, bx0, Metric::euclidean);
    double h_g = dg * (x0 - pinv_g).squaredNorm();
    Vec u = (x0 - pinv_g).normalized();
    Mat refl = Mat::Identity(d, d) - 2.0 * u * u.transpose();
    Mat Dg = jacobian(m1, mid.v) * jacobian(m2, x0);
    Mat A_g = orthonormalize(Dg * ((x0 - pinv_g).squaredNorm() / h_g) * refl);
    return MobiusMap::inversive(std::move(p_g), std::move(pinv_g), h_g, std::move(A_g));
}

double busemann(const BoundaryPoint& x, const HalfSpacePoint& z, const HalfSpacePoint& z2) {
    if (x.inf) return std::log(z2.height / z.height);
    // transport by the unit inversion centered at x, which sends x to infinity
    auto lifted_height = [&x](const HalfSpacePoint& w) {
        return w.height / ((w.base - x.v).squaredNorm() + w.height * w.height);
    };
    return std::log(lifted_height(z2) / lifted_height(z));
}

double grad_log_deriv(const MobiusMap& m, const BoundaryPoint& x, const Vec& e) {
    if (m.kind == MobiusMap::Kind::affine) return 0.0;
    if (x.inf) return 0.0;
    Vec w = x.v - m.p_inv;
    double n2 = w.squaredNorm();
    if (n2 == 0.0) throw pole_error("grad_log_deriv at the pole");
    return -2.0 * w.dot(e) / n2;
}

} // namespace cuspflow
