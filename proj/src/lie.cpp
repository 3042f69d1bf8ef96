#include "defslam/lie.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "defslam/errors.hpp"

namespace defslam {

namespace {

constexpr double kSmallAngle = 1e-8;
constexpr double kPiMargin = 1e-10;

// cos and sin of the rotation angle from the symmetric/antisymmetric parts.
double rotation_angle(const Mat3& m, Vec3* axis_times_sin) {
    const Vec3 v = vee(m);  // sin(theta) * axis
    if (axis_times_sin) *axis_times_sin = v;
    const double c = 0.5 * (m.trace() - 1.0);
    return std::atan2(v.norm(), c);
}

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
    Rotation r(m, Unchecked{});
    if (!m.allFinite() || r.orthonormality_error() > tol) {
        throw InvalidRotationError("matrix is not a rotation (orthonormality error " +
                                   std::to_string(r.orthonormality_error()) + ")");
    }
    return r;
}

Rotation Rotation::project(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    return Rotation(svd.matrixU() * d * svd.matrixV().transpose(), Unchecked{});
}

Rotation Rotation::about_z(double angle) {
    Mat3 m;
    const double c = std::cos(angle), s = std::sin(angle);
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return Rotation(m, Unchecked{});
}

double Rotation::orthonormality_error() const {
    const double ortho = (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    return std::max(ortho, std::abs(m_.determinant() - 1.0));
}

Mat3 skew(const Vec3& v) {
    Mat3 s;
    s << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return s;
}

Vec3 vee(const Mat3& m) {
    return 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

Rotation exp_rotation(const Tangent& w) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    const Mat3 s = skew(w);
    double a, b;
    if (theta < kSmallAngle) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    return Rotation(Mat3::Identity() + a * s + b * s * s, Rotation::Unchecked{});
}

Tangent log_rotation(const Rotation& r) {
    const Mat3& m = r.matrix();
    Vec3 sin_axis;
    const double theta = rotation_angle(m, &sin_axis);

    if (theta < kSmallAngle) return sin_axis * (1.0 + theta * theta / 6.0);
    if (std::numbers::pi - theta < kPiMargin) {
        throw AmbiguousAxisError("rotation angle is pi; logarithm axis sign is ambiguous");
    }
    const double c = std::cos(theta);
    if (c > -0.9) return sin_axis * (theta / std::sin(theta));

    // Near pi the antisymmetric part is tiny; recover the axis from aaᵀ.
    const Mat3 aat = (0.5 * (m + m.transpose()) - c * Mat3::Identity()) / (1.0 - c);
    Eigen::Index k;
    aat.diagonal().maxCoeff(&k);
    Vec3 axis = aat.col(k) / std::sqrt(aat(k, k));
    axis.normalize();
    if (axis.dot(sin_axis) < 0.0) axis = -axis;
    return axis * theta;
}

Tangent inverse_retraction(const Rotation& a, const Rotation& b) {
    return log_rotation(b.inverse() * a);
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
    return rotation_angle(a.matrix().transpose() * b.matrix(), nullptr);
}

Mat3 right_jacobian(const Tangent& w) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    const Mat3 s = skew(w);
    double a, b;
    if (theta < 1e-5) {
        a = 0.5 - theta2 / 24.0;
        b = 1.0 / 6.0 - theta2 / 120.0;
    } else {
        a = (1.0 - std::cos(theta)) / theta2;
        b = (theta - std::sin(theta)) / (theta2 * theta);
    }
    return Mat3::Identity() - a * s + b * s * s;
}

Mat3 right_jacobian_inverse(const Tangent& w) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    const Mat3 s = skew(w);
    double b;
    if (theta < 1e-5) {
        b = 1.0 / 12.0 + theta2 / 720.0;
    } else {
        b = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
    }
    return Mat3::Identity() + 0.5 * s + b * s * s;
}

}  // namespace defslam
