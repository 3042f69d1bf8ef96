#include "defslam/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "defslam/errors.hpp"

namespace defslam {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

struct PeriodRange {
    double min, max;
};

struct PresetParams {
    std::vector<PeriodRange> periods;   // one range per mode
    double amp_min, amp_max;
    bool harmonic;                      // second mode at half the first period
};

PresetParams preset_params(DeformationPreset p) {
    switch (p) {
        case DeformationPreset::Heart: return {{{4.0, 6.0}}, 5.0, 15.0, true};
        case DeformationPreset::Stomach: return {{{8.0, 14.0}}, 10.0, 25.0, false};
        case DeformationPreset::Lung: return {{{5.0, 8.0}}, 10.0, 30.0, false};
        case DeformationPreset::Generic: break;
    }
    // A fast cardiac-like mode mixed with a slower respiratory-like one.
    return {{{2.5, 3.2}, {5.0, 8.0}}, 10.0, 30.0, false};
}

Vec3 random_direction(bool planar, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (;;) {
        Vec3 d(n(rng), n(rng), planar ? 0.0 : n(rng));
        if (d.norm() > 1e-6) return d.normalized();
    }
}

bool inside_workspace(const SimConfig& c, const Vec3& f) {
    return f.x() >= -100.0 && f.x() <= c.workspace_x - 100.0 && std::abs(f.y()) <= 0.5 * c.workspace_y;
}

double heading_of_path(const Pose& pose) {
    const Vec3 fwd = pose.forward();
    return std::atan2(fwd.y(), fwd.x());
}

}  // namespace

std::string to_string(DeformationPreset p) {
    switch (p) {
        case DeformationPreset::Generic: return "generic";
        case DeformationPreset::Heart: return "heart";
        case DeformationPreset::Stomach: return "stomach";
        case DeformationPreset::Lung: return "lung";
    }
    return "generic";
}

std::string to_string(TrajectoryShape s) {
    return s == TrajectoryShape::CircularArc ? "arc" : "random_walk";
}

DeformationPreset parse_preset(const std::string& name) {
    if (name == "generic") return DeformationPreset::Generic;
    if (name == "heart") return DeformationPreset::Heart;
    if (name == "stomach") return DeformationPreset::Stomach;
    if (name == "lung") return DeformationPreset::Lung;
    throw SchemaError("unknown deformation preset '" + name + "' (generic | heart | stomach | lung)");
}

TrajectoryShape parse_trajectory_shape(const std::string& name) {
    if (name == "arc") return TrajectoryShape::CircularArc;
    if (name == "random_walk") return TrajectoryShape::RandomWalk;
    throw SchemaError("unknown trajectory shape '" + name + "' (arc | random_walk)");
}

Vec3 FeatureMotion::at(int step) const {
    Vec3 f = base;
    for (const DeformationMode& m : modes) {
        // Reducing the step modulo the period makes integer periods repeat bit-exactly.
        f += m.amplitude * std::sin(2.0 * kPi * std::fmod(static_cast<double>(step), m.period) / m.period + m.phase);
    }
    return f;
}

Points DeformationSpec::positions(int step) const {
    Points p(3, static_cast<Eigen::Index>(features.size()));
    for (std::size_t i = 0; i < features.size(); ++i) p.col(static_cast<Eigen::Index>(i)) = features[i].at(step);
    return p;
}

void SimConfig::validate() const {
    if (!(workspace_x > 100.0) || !(workspace_y > 0.0)) throw SchemaError("workspace extent too small");
    if (n_features < 3) throw SchemaError("n_features must be >= 3");
    if (n_steps < 1) throw SchemaError("n_steps must be >= 1");
    if (!(fov_min_deg > 0.0) || !(fov_max_deg < 360.0) || fov_min_deg > fov_max_deg) {
        throw SchemaError("fov range must satisfy 0 < min <= max < 360 degrees");
    }
    if (!(noise_min >= 0.0) || noise_min > noise_max) throw SchemaError("noise range must satisfy 0 <= min <= max");
    if (hold_steps < 0) throw SchemaError("hold_steps must be >= 0");
    if (!(step_length >= 0.0) || !(arc_radius > 0.0)) throw SchemaError("path parameters must be positive");
    if (!(feature_range_min > 0.0) || feature_range_min > feature_range_max) {
        throw SchemaError("feature range must satisfy 0 < min <= max");
    }
    if (min_covisible < 3) throw SchemaError("min_covisible must be >= 3");
    if (!(amplitude_scale >= 0.0)) throw SchemaError("amplitude_scale must be non-negative");
}

std::mt19937_64 make_rng(std::uint64_t master_seed, std::uint64_t run) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(run), static_cast<std::uint32_t>(run >> 32)};
    return std::mt19937_64(seq);
}

ModeSet draw_modes(const SimConfig& config, std::mt19937_64& rng) {
    const PresetParams pp = preset_params(config.preset);
    ModeSet modes;
    for (const PeriodRange& r : pp.periods) {
        modes.periods.push_back(std::uniform_real_distribution<double>(r.min, r.max)(rng));
    }
    if (pp.harmonic) modes.periods.push_back(0.5 * modes.periods.front());
    return modes;
}

DeformationSpec generate_environment(const SimConfig& config, const ModeSet& modes,
                                     const std::vector<Pose>& path, const SensorParams& sensor,
                                     std::mt19937_64& rng) {
    const PresetParams pp = preset_params(config.preset);
    std::uniform_int_distribution<std::size_t> pick(0, path.size() - 1);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> range(config.feature_range_min, config.feature_range_max);
    std::uniform_real_distribution<double> amp(pp.amp_min, pp.amp_max);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    const double spread = 0.7 * deg2rad(0.5 * sensor.fov_deg);

    DeformationSpec spec;
    spec.features.resize(static_cast<std::size_t>(config.n_features));
    for (FeatureMotion& fm : spec.features) {
        for (;;) {
            const Pose& anchor = path[pick(rng)];
            const double bearing = heading_of_path(anchor) + spread * unit(rng);
            const double elevation = config.planar ? 0.0 : spread * unit(rng);
            const double d = range(rng);
            const Vec3 dir(std::cos(elevation) * std::cos(bearing), std::cos(elevation) * std::sin(bearing),
                           std::sin(elevation));
            fm.base = anchor.position + d * dir;
            if (config.planar) fm.base.z() = 0.0;
            if (inside_workspace(config, fm.base)) break;
        }
        fm.modes.clear();
        for (double period : modes.periods) {
            DeformationMode m;
            m.period = period;
            m.amplitude = config.amplitude_scale * amp(rng) * random_direction(config.planar, rng);
            m.phase = phase(rng);
            fm.modes.push_back(m);
        }
    }
    return spec;
}

std::vector<Pose> generate_trajectory(const SimConfig& config, std::mt19937_64& rng) {
    std::vector<Pose> path(static_cast<std::size_t>(config.n_steps));
    std::normal_distribution<double> turn(0.0, 0.03);
    double heading = 0.0;
    Vec3 p = Vec3::Zero();
    for (int j = 0; j < config.n_steps; ++j) {
        const int moved = j - config.hold_steps + 1;
        if (moved > 0) {
            if (config.trajectory == TrajectoryShape::CircularArc) {
                const double phi = moved * config.step_length / config.arc_radius;
                heading = phi;
                p = Vec3(config.arc_radius * std::sin(phi), config.arc_radius * (1.0 - std::cos(phi)), 0.0);
            } else {
                heading += turn(rng);
                p += config.step_length * Vec3(std::cos(heading), std::sin(heading), 0.0);
            }
        }
        Mat3 robot_to_world = Eigen::AngleAxisd(heading, Vec3::UnitZ()).toRotationMatrix();
        Vec3 pos = p;
        if (!config.planar && moved > 0) {
            const double s = std::sin(2.0 * kPi * moved / std::max(config.n_steps, 2));
            robot_to_world = robot_to_world * Eigen::AngleAxisd(0.05 * s, Vec3::UnitY()).toRotationMatrix();
            pos.z() = 10.0 * s;
        }
        path[static_cast<std::size_t>(j)].rotation = Rotation::project(robot_to_world.transpose());
        path[static_cast<std::size_t>(j)].position = pos;
    }
    return path;
}

SensorParams draw_sensor(const SimConfig& config, std::mt19937_64& rng) {
    SensorParams s;
    s.fov_deg = std::uniform_real_distribution<double>(config.fov_min_deg, config.fov_max_deg)(rng);
    s.noise_sigma = std::uniform_real_distribution<double>(config.noise_min, config.noise_max)(rng);
    return s;
}

bool in_view(const Pose& pose, const Vec3& feature, double fov_deg) {
    const Vec3 d = pose.rotation * (feature - pose.position);
    const double angle = std::atan2(d.tail<2>().norm(), d.x());
    return angle <= deg2rad(0.5 * fov_deg);
}

std::vector<std::optional<Vec3>> observe(const Pose& pose, const Points& features, const SensorParams& sensor,
                                         std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::optional<Vec3>> out(static_cast<std::size_t>(features.cols()));
    for (Eigen::Index i = 0; i < features.cols(); ++i) {
        if (!in_view(pose, features.col(i), sensor.fov_deg)) continue;
        Vec3 z = observe_model(pose.rotation, pose.position, features.col(i));
        if (sensor.noise_sigma > 0.0) {
            const double nx = noise(rng), ny = noise(rng), nz = noise(rng);
            z += sensor.noise_sigma * Vec3(nx, ny, nz);
        }
        out[static_cast<std::size_t>(i)] = z;
    }
    return out;
}

Eigen::VectorXd exact_prior_coefficients(const std::vector<double>& periods, int window) {
    const int degree = 2 * static_cast<int>(periods.size()) + 1;
    if (degree > window) {
        throw PreconditionError("window " + std::to_string(window) + " cannot represent " +
                                std::to_string(periods.size()) + " periodic modes");
    }
    // Monic polynomial (z − 1)·Π(z² − 2cos ω z + 1), highest power first.
    std::vector<double> poly{1.0, -1.0};
    for (double period : periods) {
        const double w = 2.0 * kPi / period;
        const double factor[3] = {1.0, -2.0 * std::cos(w), 1.0};
        std::vector<double> next(poly.size() + 2, 0.0);
        for (std::size_t a = 0; a < poly.size(); ++a)
            for (std::size_t b = 0; b < 3; ++b) next[a + b] += poly[a] * factor[b];
        poly = std::move(next);
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(window);
    for (int k = 1; k < degree + 1; ++k) c(k - 1) = -poly[static_cast<std::size_t>(k)];
    return c;
}

SimulatedDataset simulate(const SimConfig& config, int run, int window) {
    config.validate();
    std::mt19937_64 rng = make_rng(config.seed, static_cast<std::uint64_t>(run));
    SimulatedDataset ds;
    ds.config = config;
    ds.run = run;
    ds.sensor = draw_sensor(config, rng);
    const ModeSet modes = draw_modes(config, rng);
    const std::vector<Pose> path = generate_trajectory(config, rng);

    const int N = config.n_features;
    const int F = config.n_steps;
    std::vector<Points> truth_positions;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        ds.deformation = generate_environment(config, modes, path, ds.sensor, rng);
        truth_positions.clear();
        for (int j = 0; j < F; ++j) truth_positions.push_back(ds.deformation.positions(j));
        ok = true;
        for (int j = 0; j + 1 < F && ok; ++j) {
            int shared = 0;
            for (int i = 0; i < N; ++i) {
                shared += in_view(path[static_cast<std::size_t>(j)], truth_positions[static_cast<std::size_t>(j)].col(i),
                                  ds.sensor.fov_deg) &&
                          in_view(path[static_cast<std::size_t>(j + 1)],
                                  truth_positions[static_cast<std::size_t>(j + 1)].col(i), ds.sensor.fov_deg);
            }
            ok = shared >= config.min_covisible;
        }
    }
    if (!ok) {
        throw UnsolvableInstanceError("could not place features with " + std::to_string(config.min_covisible) +
                                      " co-visible per step pair");
    }

    ds.observations = ObservationSet(N, F);
    ds.truth.shapes = ShapeMatrix(N, F);
    for (int j = 0; j < F; ++j) {
        const Pose& pose = path[static_cast<std::size_t>(j)];
        ds.truth.rotations.push_back(pose.rotation);
        ds.truth.positions.push_back(pose.position);
        const auto z = observe(pose, truth_positions[static_cast<std::size_t>(j)], ds.sensor, rng);
        for (int i = 0; i < N; ++i) {
            ds.truth.shapes.set(i, j, truth_positions[static_cast<std::size_t>(j)].col(i));
            ds.truth.shapes.set_valid(i, j, z[static_cast<std::size_t>(i)].has_value());
            if (z[static_cast<std::size_t>(i)]) ds.observations.set(i, j, *z[static_cast<std::size_t>(i)]);
        }
    }
    if (2 * static_cast<int>(modes.periods.size()) + 1 <= window) {
        ds.truth.coeffs = exact_prior_coefficients(modes.periods, window);
    }
    return ds;
}

double RmseMetrics::position() const { return std::hypot(x, y); }

double heading_of(const Rotation& world_to_robot) {
    const Mat3& R = world_to_robot.matrix();
    return std::atan2(R(0, 1), R(0, 0));
}

RmseMetrics evaluate_rmse(const TrajectoryState& estimate, const TrajectoryState& truth, bool planar) {
    if (estimate.steps() != truth.steps()) {
        throw DimensionMismatchError("estimate has " + std::to_string(estimate.steps()) + " steps, truth " +
                                     std::to_string(truth.steps()));
    }
    RmseMetrics m;
    const int F = truth.steps();
    if (F == 0) return m;
    for (int j = 0; j < F; ++j) {
        const Vec3 d = estimate.positions[static_cast<std::size_t>(j)] - truth.positions[static_cast<std::size_t>(j)];
        m.x += d.x() * d.x();
        m.y += d.y() * d.y();
        m.z += d.z() * d.z();
        double a;
        if (planar) {
            a = std::remainder(heading_of(estimate.rotations[static_cast<std::size_t>(j)]) -
                                   heading_of(truth.rotations[static_cast<std::size_t>(j)]),
                               2.0 * kPi);
        } else {
            a = geodesic_angle(estimate.rotations[static_cast<std::size_t>(j)],
                               truth.rotations[static_cast<std::size_t>(j)]);
        }
        m.heading += a * a;
    }
    m.x = std::sqrt(m.x / F);
    m.y = std::sqrt(m.y / F);
    m.z = std::sqrt(m.z / F);
    m.heading = std::sqrt(m.heading / F);

    if (estimate.features() == truth.features()) {
        double sum = 0.0;
        int count = 0;
        for (int i = 0; i < truth.features(); ++i) {
            for (int j = 0; j < F; ++j) {
                if (!truth.shapes.valid(i, j)) continue;
                sum += (estimate.shapes.at(i, j) - truth.shapes.at(i, j)).squaredNorm();
                ++count;
            }
        }
        m.feature = count > 0 ? std::sqrt(sum / count) : 0.0;
    }
    return m;
}

}  // namespace defslam
