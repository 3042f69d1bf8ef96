#pragma once

// Hand-rolled generators and comparison helpers shared by the test suites.

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "defslam/lie.hpp"
#include "defslam/observability.hpp"
#include "defslam/ts_slam.hpp"

namespace defslam::test {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Relative Frobenius difference, guarded against tiny references.
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
    return (a - ref).norm() / std::max(1.0, ref.norm());
}

/// A small synthetic SLAM world: anchored poses for the first `window` steps,
/// then a gently turning path; feature positions from `feature(i, j)`.
struct World {
    TrajectoryState truth;
    ObservationSet obs;
};

inline Rotation world_rotation(int j, int window) {
    if (j < window) return Rotation();
    const double s = j - window + 1;
    return Rotation::about_z(0.03 * s) * exp_rotation(Tangent(0.01 * std::sin(s), 0.015 * std::cos(0.7 * s), 0.0));
}

inline Vec3 world_position(int j, int window) {
    if (j < window) return Vec3::Zero();
    const double s = j - window + 1;
    return Vec3(4.0 * s, 1.5 * std::sin(0.5 * s), 0.8 * std::cos(0.3 * s) - 0.8);
}

inline World make_world(int features, int steps, int window, const std::function<Vec3(int, int)>& feature,
                        double sigma = 0.0, std::uint64_t seed = 1,
                        const std::function<bool(int, int)>& visible = nullptr) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    World w;
    w.obs = ObservationSet(features, steps);
    w.truth.shapes = ShapeMatrix(features, steps);
    for (int j = 0; j < steps; ++j) {
        w.truth.rotations.push_back(world_rotation(j, window));
        w.truth.positions.push_back(world_position(j, window));
    }
    for (int i = 0; i < features; ++i) {
        for (int j = 0; j < steps; ++j) {
            const Vec3 f = feature(i, j);
            w.truth.shapes.set(i, j, f);
            const bool seen = !visible || visible(i, j);
            w.truth.shapes.set_valid(i, j, seen);
            if (!seen) continue;
            Vec3 z = observe_model(w.truth.rotations[static_cast<std::size_t>(j)],
                                   w.truth.positions[static_cast<std::size_t>(j)], f);
            if (sigma > 0.0) z += sigma * Vec3(noise(rng), noise(rng), noise(rng));
            w.obs.set(i, j, z);
        }
    }
    w.truth.coeffs = static_prior_coefficients(window);
    return w;
}

/// Feature base positions spread ahead of the robot.
inline Vec3 feature_base(int i) {
    return Vec3(150.0 + 17.0 * (i % 5) + 3.0 * i, -60.0 + 29.0 * (i % 4) + 2.0 * i, -30.0 + 13.0 * (i % 6));
}

/// Period-2 oscillation around the base position.
inline Vec3 period_two_feature(int i, int j) {
    const Vec3 amp(3.0 + i % 3, 2.0 - 0.5 * (i % 2), 1.0 + 0.2 * i);
    return feature_base(i) + (j % 2 == 0 ? amp : Vec3(-amp));
}

inline Vec3 static_feature(int i, int) { return feature_base(i); }

/// A random state for derivative checks.
inline TrajectoryState random_state(std::mt19937_64& rng, int features, int steps, int window) {
    TrajectoryState s;
    for (int j = 0; j < steps; ++j) {
        s.rotations.push_back(exp_rotation(Tangent(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1))));
        s.positions.push_back(Vec3(uniform(rng, -20, 20), uniform(rng, -20, 20), uniform(rng, -20, 20)));
    }
    s.shapes = ShapeMatrix(features, steps);
    for (int i = 0; i < features; ++i)
        for (int j = 0; j < steps; ++j) {
            s.shapes.set(i, j, Vec3(uniform(rng, 50, 150), uniform(rng, -50, 50), uniform(rng, -50, 50)));
            s.shapes.set_valid(i, j, true);
        }
    s.coeffs = Eigen::VectorXd::Zero(window);
    for (int k = 0; k < window; ++k) s.coeffs(k) = uniform(rng, -1, 1);
    return s;
}

/// Observations with a random mask (about 80% visible) and arbitrary values.
inline ObservationSet random_observations(std::mt19937_64& rng, int features, int steps) {
    ObservationSet obs(features, steps);
    for (int i = 0; i < features; ++i)
        for (int j = 0; j < steps; ++j)
            if (uniform(rng, 0, 1) < 0.8) obs.set(i, j, Vec3(uniform(rng, 50, 150), uniform(rng, -50, 50), uniform(rng, -50, 50)));
    return obs;
}

}  // namespace defslam::test
