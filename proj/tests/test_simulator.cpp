#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "defslam/errors.hpp"
#include "defslam/simulator.hpp"
#include "defslam/ts_slam.hpp"
#include "helpers.hpp"

using namespace defslam;

namespace {

bool same_state(const TrajectoryState& a, const TrajectoryState& b) {
    if (a.steps() != b.steps() || a.features() != b.features()) return false;
    for (int j = 0; j < a.steps(); ++j) {
        if (a.rotations[static_cast<std::size_t>(j)].matrix() != b.rotations[static_cast<std::size_t>(j)].matrix()) return false;
        if (a.positions[static_cast<std::size_t>(j)] != b.positions[static_cast<std::size_t>(j)]) return false;
    }
    return a.shapes.matrix() == b.shapes.matrix() && a.coeffs == b.coeffs;
}

}  // namespace

TEST_CASE("default dataset layout and determinism") {
    const SimConfig config;
    const SimulatedDataset a = simulate(config, 0);
    CHECK(a.observations.features() == 20);
    CHECK(a.observations.steps() == 60);
    const SimulatedDataset b = simulate(config, 0);
    CHECK(same_state(a.truth, b.truth));
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 60; ++j) CHECK(a.observations.at(i, j) == b.observations.at(i, j));
    const SimulatedDataset c = simulate(config, 1);
    CHECK(!same_state(a.truth, c.truth));

    for (int j = 0; j + 1 < 60; ++j) {
        int shared = 0;
        for (int i = 0; i < 20; ++i) shared += a.observations.visible(i, j) && a.observations.visible(i, j + 1);
        CHECK(shared >= config.min_covisible);
    }
}

TEST_CASE("visibility mask matches the field-of-view predicate") {
    SimConfig config;
    config.seed = 5;
    for (int run = 0; run < 3; ++run) {
        const SimulatedDataset d = simulate(config, run);
        for (int j = 0; j < 60; ++j) {
            const Pose pose{d.truth.rotations[static_cast<std::size_t>(j)], d.truth.positions[static_cast<std::size_t>(j)]};
            for (int i = 0; i < 20; ++i) {
                CHECK(d.observations.visible(i, j) == in_view(pose, d.truth.shapes.at(i, j), d.sensor.fov_deg));
            }
        }
    }
}

TEST_CASE("noise calibration") {
    SimConfig config;
    config.noise_min = config.noise_max = 2.0;
    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    long count = 0;
    for (int run = 0; count < 12000; ++run) {
        const SimulatedDataset d = simulate(config, run);
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 60; ++j) {
                if (!d.observations.visible(i, j)) continue;
                const Vec3 e = *d.observations.at(i, j) - observe_model(d.truth.rotations[static_cast<std::size_t>(j)],
                                                                       d.truth.positions[static_cast<std::size_t>(j)],
                                                                       d.truth.shapes.at(i, j));
                for (int k = 0; k < 3; ++k) {
                    sum[k] += e(k);
                    sq[k] += e(k) * e(k);
                }
                ++count;
            }
    }
    for (int k = 0; k < 3; ++k) {
        const double mean = sum[k] / static_cast<double>(count);
        const double sd = std::sqrt(sq[k] / static_cast<double>(count) - mean * mean);
        CHECK(std::abs(sd - 2.0) <= 0.1);
    }
}

TEST_CASE("noiseless observations satisfy the observation model") {
    SimConfig config;
    config.noise_min = config.noise_max = 0.0;
    const SimulatedDataset d = simulate(config, 2);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 60; ++j)
            if (d.observations.visible(i, j)) {
                const Vec3 z = observe_model(d.truth.rotations[static_cast<std::size_t>(j)],
                                             d.truth.positions[static_cast<std::size_t>(j)], d.truth.shapes.at(i, j));
                CHECK(*d.observations.at(i, j) == z);
            }
}

TEST_CASE("deformation generator") {
    FeatureMotion m;
    m.base = Vec3(100, 20, -5);
    CHECK(m.at(7) == m.base);

    m.modes.push_back({Vec3(3, 1, 2), 2.0, 0.3});
    for (int j = 0; j < 20; ++j) CHECK(m.at(j) == m.at(j + 2));

    m.modes[0].period = 6.0;
    for (int j = 0; j < 54; ++j) CHECK(m.at(j) == m.at(j + 6));

    SimConfig config;
    config.amplitude_scale = 0.0;
    const SimulatedDataset d = simulate(config, 0);
    for (int i = 0; i < 20; ++i)
        for (int j = 1; j < 60; ++j) CHECK(d.truth.shapes.at(i, j) == d.truth.shapes.at(i, 0));

    for (DeformationPreset p : {DeformationPreset::Generic, DeformationPreset::Heart, DeformationPreset::Stomach,
                                DeformationPreset::Lung}) {
        SimConfig pc;
        pc.preset = p;
        CHECK(parse_preset(to_string(p)) == p);
        CHECK(same_state(simulate(pc, 4).truth, simulate(pc, 4).truth));
    }
    CHECK_THROWS_AS(parse_preset("liver"), SchemaError);
}

TEST_CASE("true coefficients reproduce the simulated features") {
    const SimConfig config;
    const SimulatedDataset d = simulate(config, 6);
    REQUIRE(d.truth.coeffs.size() == 5);
    TrajectoryState full = d.truth;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 60; ++j) full.shapes.set_valid(i, j, true);
    CHECK(e_f(full).energy <= 1e-14 * 20 * 60);

    // Period 2: (z − 1)(z + 1)² = z³ + z² − z − 1, so f⁺ = −f⁰ + f⁻¹ + f⁻².
    const Eigen::VectorXd c = exact_prior_coefficients({2.0}, 4);
    CHECK((c - Eigen::Vector4d(-1, 1, 1, 0)).norm() <= 1e-14);
    CHECK_THROWS_AS(exact_prior_coefficients({2.0, 3.0}, 4), PreconditionError);
}

TEST_CASE("trajectory") {
    std::mt19937_64 rng(51);
    SimConfig one;
    one.n_steps = 1;
    const auto single = generate_trajectory(one, rng);
    REQUIRE(single.size() == 1);
    CHECK(single[0].rotation.matrix() == Mat3::Identity());
    CHECK(single[0].position == Vec3::Zero());

    for (TrajectoryShape shape : {TrajectoryShape::CircularArc, TrajectoryShape::RandomWalk}) {
        SimConfig config;
        config.trajectory = shape;
        CHECK(parse_trajectory_shape(to_string(shape)) == shape);
        const auto path = generate_trajectory(config, rng);
        for (std::size_t j = 1; j < path.size(); ++j) {
            CHECK((path[j].position - path[j - 1].position).norm() <= config.step_length + 1e-9);
            // Planar: rotation axis along z.
            const Tangent w = log_rotation(path[j].rotation);
            if (w.norm() > 1e-9) CHECK(std::abs(std::abs(w.normalized().z()) - 1.0) <= 1e-9);
        }
        for (int j = 0; j < config.hold_steps; ++j) {
            CHECK(path[static_cast<std::size_t>(j)].position == Vec3::Zero());
        }
    }
}

TEST_CASE("field of view") {
    const Pose pose;
    CHECK(in_view(pose, Vec3(100, 0, 0), 60.0));
    CHECK(!in_view(pose, Vec3(-100, 0, 0), 60.0));
    CHECK(!in_view(pose, Vec3(100, 100, 0), 60.0));
    CHECK(in_view(pose, Vec3(100, 50, 0), 60.0));
    // A full-circle field of view sees everything.
    std::mt19937_64 rng(52);
    for (int k = 0; k < 50; ++k) {
        const Vec3 f(defslam::test::uniform(rng, -100, 100), defslam::test::uniform(rng, -100, 100),
                     defslam::test::uniform(rng, -100, 100));
        CHECK(in_view(pose, f, 360.0));
    }
    Points pts(3, 2);
    pts.col(0) = Vec3(100, 0, 0);
    pts.col(1) = Vec3(-100, 0, 0);
    const auto z = observe(pose, pts, SensorParams{60.0, 0.0}, rng);
    CHECK(z[0].has_value());
    CHECK(*z[0] == Vec3(100, 0, 0));
    CHECK(!z[1].has_value());
}

TEST_CASE("rmse metrics") {
    const SimulatedDataset d = simulate(SimConfig{}, 0);
    RmseMetrics zero = evaluate_rmse(d.truth, d.truth, true);
    CHECK(zero.x == 0.0);
    CHECK(zero.y == 0.0);
    CHECK(zero.heading == 0.0);
    CHECK(zero.feature == 0.0);

    TrajectoryState shifted = d.truth;
    for (Vec3& p : shifted.positions) p.x() += 1.0;
    const RmseMetrics m = evaluate_rmse(shifted, d.truth, true);
    CHECK(m.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.y == 0.0);

    std::mt19937_64 rng(53);
    TrajectoryState noisy = d.truth;
    double sy = 0.0, sh = 0.0;
    for (int j = 0; j < noisy.steps(); ++j) {
        const double dy = defslam::test::uniform(rng, -3, 3), dh = defslam::test::uniform(rng, -0.1, 0.1);
        noisy.positions[static_cast<std::size_t>(j)].y() += dy;
        noisy.rotations[static_cast<std::size_t>(j)] = Rotation::about_z(-dh) * noisy.rotations[static_cast<std::size_t>(j)];
        sy += dy * dy;
        sh += dh * dh;
    }
    const RmseMetrics r = evaluate_rmse(noisy, d.truth, true);
    CHECK(r.y == doctest::Approx(std::sqrt(sy / noisy.steps())).epsilon(1e-12));
    CHECK(r.heading == doctest::Approx(std::sqrt(sh / noisy.steps())).epsilon(1e-9));
    CHECK(r.position() == doctest::Approx(std::hypot(r.x, r.y)));

    TrajectoryState short_state = d.truth;
    short_state.rotations.pop_back();
    short_state.positions.pop_back();
    CHECK_THROWS_AS(evaluate_rmse(short_state, d.truth, true), DimensionMismatchError);
}

TEST_CASE("config validation") {
    SimConfig c;
    c.n_features = 2;
    CHECK_THROWS_AS(c.validate(), SchemaError);
    c = SimConfig{};
    c.noise_min = 3;
    c.noise_max = 1;
    CHECK_THROWS_AS(c.validate(), SchemaError);
    c = SimConfig{};
    c.fov_min_deg = 0;
    CHECK_THROWS_AS(c.validate(), SchemaError);
}
