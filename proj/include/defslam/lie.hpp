#pragma once

#include <Eigen/Core>

namespace defslam {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Tangent vector of SO(3), axis times angle in radians.
using Tangent = Eigen::Vector3d;

/// Element of SO(3). Construction from a raw matrix is checked.
class Rotation {
public:
    Rotation() : m_(Mat3::Identity()) {}

    /// Throws InvalidRotationError unless |RᵀR - I| and |det R - 1| are within `tol`.
    static Rotation from_matrix(const Mat3& m, double tol = 1e-9);

    /// Closest rotation in Frobenius norm (SVD projection).
    static Rotation project(const Mat3& m);

    static Rotation about_z(double angle);

    const Mat3& matrix() const { return m_; }
    Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }

    Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, Unchecked{}); }
    Vec3 operator*(const Vec3& v) const { return m_ * v; }

    /// Largest of |RᵀR - I|_max and |det R - 1|.
    double orthonormality_error() const;
    bool is_valid(double tol = 1e-12) const { return orthonormality_error() <= tol; }

private:
    struct Unchecked {};
    Rotation(const Mat3& m, Unchecked) : m_(m) {}
    friend Rotation exp_rotation(const Tangent& w);

    Mat3 m_;
};

/// S(v) with S(v)·w = v × w.
Mat3 skew(const Vec3& v);

/// Inverse of skew for the antisymmetric part of `m`.
Vec3 vee(const Mat3& m);

/// Rodrigues formula; second-order series below |w| < 1e-8.
Rotation exp_rotation(const Tangent& w);

/// Principal logarithm, |result| <= pi. Throws AmbiguousAxisError within 1e-10 of pi.
Tangent log_rotation(const Rotation& r);

/// a ⊖ b = log(bᵀa): the tangent w with a = b·exp(w).
Tangent inverse_retraction(const Rotation& a, const Rotation& b);

/// Geodesic angle between two rotations from the trace formula.
double geodesic_angle(const Rotation& a, const Rotation& b);

/// Right Jacobian of SO(3): exp(w + d) ≈ exp(w)·exp(Jr(w)·d).
Mat3 right_jacobian(const Tangent& w);

/// Inverse right Jacobian: log(exp(w)·exp(d)) ≈ w + Jr⁻¹(w)·d.
Mat3 right_jacobian_inverse(const Tangent& w);

}  // namespace defslam
