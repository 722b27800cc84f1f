#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

namespace twinforge {

template <typename Scalar>
using Point2 = Eigen::Matrix<Scalar, 2, 1>;

using Point = Point2<double>;

/// z-component of the 3D cross product of two planar vectors.
template <typename Scalar>
Scalar cross2(const Point2<Scalar>& u, const Point2<Scalar>& v)
{
    return u.x() * v.y() - u.y() * v.x();
}

/// Wraps an angle to (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar angle)
{
    const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
    Scalar wrapped = std::remainder(angle, two_pi);
    if (wrapped <= -std::numbers::pi_v<Scalar>)
        wrapped += two_pi;
    return wrapped;
}

template <typename Scalar>
Scalar direction_angle(const Point2<Scalar>& from, const Point2<Scalar>& to)
{
    const Point2<Scalar> d = to - from;
    return wrap_angle<Scalar>(std::atan2(d.y(), d.x()));
}

/// Mirror image of `p` across the infinite line through `a` and `b`.
template <typename Scalar>
Point2<Scalar> reflect_across_line(const Point2<Scalar>& p, const Point2<Scalar>& a, const Point2<Scalar>& b)
{
    const Point2<Scalar> d = (b - a).normalized();
    const Point2<Scalar> ap = p - a;
    const Point2<Scalar> foot = a + d * ap.dot(d);
    return Scalar(2) * foot - p;
}

/// Right-hand unit normal of the directed segment a -> b.
template <typename Scalar>
Point2<Scalar> right_normal(const Point2<Scalar>& a, const Point2<Scalar>& b)
{
    const Point2<Scalar> d = b - a;
    return Point2<Scalar>(d.y(), -d.x()).normalized();
}

template <typename Scalar>
Scalar point_segment_distance(const Point2<Scalar>& p, const Point2<Scalar>& a, const Point2<Scalar>& b)
{
    const Point2<Scalar> d = b - a;
    const Scalar t = std::clamp<Scalar>((p - a).dot(d) / d.squaredNorm(), Scalar(0), Scalar(1));
    return (a + t * d - p).norm();
}

/// Parameters (t along p0->p1, s along q0->q1) of the crossing of two
/// non-parallel lines; nullopt when the lines are parallel.
template <typename Scalar>
std::optional<std::pair<Scalar, Scalar>> line_crossing(const Point2<Scalar>& p0, const Point2<Scalar>& p1,
                                                       const Point2<Scalar>& q0, const Point2<Scalar>& q1)
{
    const Point2<Scalar> r = p1 - p0;
    const Point2<Scalar> s = q1 - q0;
    const Scalar denom = cross2<Scalar>(r, s);
    const Scalar scale = r.norm() * s.norm();
    if (std::abs(denom) <= Scalar(1e-14) * scale)
        return std::nullopt;
    const Point2<Scalar> qp = q0 - p0;
    return std::make_pair(cross2<Scalar>(qp, s) / denom, cross2<Scalar>(qp, r) / denom);
}

/// Closed segment intersection test. Touching at an endpoint counts as an
/// intersection, and so does collinear overlap.
template <typename Scalar>
bool segments_intersect(const Point2<Scalar>& p0, const Point2<Scalar>& p1, const Point2<Scalar>& q0,
                        const Point2<Scalar>& q1, Scalar eps = Scalar(1e-12))
{
    if (auto hit = line_crossing<Scalar>(p0, p1, q0, q1)) {
        const auto [t, s] = *hit;
        return t >= -eps && t <= 1 + eps && s >= -eps && s <= 1 + eps;
    }
    // Parallel: only collinear overlap blocks.
    const Point2<Scalar> r = p1 - p0;
    if (std::abs(cross2<Scalar>(r, q0 - p0)) > eps * r.norm() * std::max<Scalar>(Scalar(1), (q0 - p0).norm()))
        return false;
    const Scalar rr = r.squaredNorm();
    Scalar t0 = (q0 - p0).dot(r) / rr;
    Scalar t1 = (q1 - p0).dot(r) / rr;
    if (t0 > t1)
        std::swap(t0, t1);
    return t1 >= -eps && t0 <= 1 + eps;
}

} // namespace twinforge
