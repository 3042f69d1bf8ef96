#pragma once

// Monte Carlo generator: periodically deforming features, a robot path that
// holds still at the anchor for its first steps, and noisy limited-field-of-view
// observations. All lengths in millimetres.
//
// Pose convention: a stored rotation R maps world to robot, z = R(f − p). The
// robot looks along its local +x axis, so its world viewing direction is the
// first column of Rᵀ.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "defslam/lie.hpp"
#include "defslam/ts_slam.hpp"

namespace defslam {

enum class DeformationPreset { Generic, Heart, Stomach, Lung };
enum class TrajectoryShape { CircularArc, RandomWalk };

std::string to_string(DeformationPreset p);
std::string to_string(TrajectoryShape s);
/// Throws SchemaError on unknown names.
DeformationPreset parse_preset(const std::string& name);
TrajectoryShape parse_trajectory_shape(const std::string& name);

struct DeformationMode {
    Vec3 amplitude = Vec3::Zero();
    double period = 2.0;        ///< steps
    double phase = 0.0;         ///< radians
};

struct FeatureMotion {
    Vec3 base = Vec3::Zero();
    std::vector<DeformationMode> modes;

    Vec3 at(int step) const;
};

struct DeformationSpec {
    std::vector<FeatureMotion> features;

    /// 3×N positions at `step`.
    Points positions(int step) const;
};

struct SimConfig {
    // Workspace: x in [−100, workspace_x − 100], y in [−workspace_y/2, workspace_y/2];
    // the robot starts at the origin facing +x.
    double workspace_x = 500.0;
    double workspace_y = 500.0;
    int n_features = 20;
    int n_steps = 60;
    double fov_min_deg = 30.0;          ///< full viewing angle range
    double fov_max_deg = 90.0;
    double noise_min = 1.0;             ///< σ range, mm
    double noise_max = 5.0;
    std::uint64_t seed = 1;
    bool planar = true;
    DeformationPreset preset = DeformationPreset::Generic;
    TrajectoryShape trajectory = TrajectoryShape::CircularArc;
    int hold_steps = 5;                 ///< steps spent at the anchor before moving
    double step_length = 4.0;           ///< mm travelled per moving step
    double arc_radius = 600.0;
    double feature_range_min = 150.0;
    double feature_range_max = 400.0;
    int min_covisible = 6;              ///< per consecutive step pair
    double amplitude_scale = 1.0;       ///< multiplies the preset amplitudes

    /// Throws SchemaError.
    void validate() const;
};

struct SensorParams {
    double fov_deg = 60.0;              ///< full viewing angle
    double noise_sigma = 1.0;
};

struct Pose {
    Rotation rotation;                  ///< world to robot
    Vec3 position = Vec3::Zero();

    /// World-frame viewing direction.
    Vec3 forward() const { return rotation.inverse() * Vec3::UnitX(); }
};

struct SimulatedDataset {
    SimConfig config;
    int run = 0;
    SensorParams sensor;
    DeformationSpec deformation;
    TrajectoryState truth;              ///< poses, true shapes (mask = visibility), true c
    ObservationSet observations;
};

/// Per-run generator seeded from (master seed, run index).
std::mt19937_64 make_rng(std::uint64_t master_seed, std::uint64_t run);

/// Modes shared by all features of one environment (periods), with
/// per-feature amplitudes and phases.
struct ModeSet {
    std::vector<double> periods;
};

ModeSet draw_modes(const SimConfig& config, std::mt19937_64& rng);

/// Features scattered in the viewing cones along the robot path, inside the
/// workspace, each carrying the shared modes with its own amplitudes and phases.
DeformationSpec generate_environment(const SimConfig& config, const ModeSet& modes,
                                     const std::vector<Pose>& path, const SensorParams& sensor,
                                     std::mt19937_64& rng);

std::vector<Pose> generate_trajectory(const SimConfig& config, std::mt19937_64& rng);

SensorParams draw_sensor(const SimConfig& config, std::mt19937_64& rng);

/// True when the angle between the viewing direction and f − p is at most fov/2.
bool in_view(const Pose& pose, const Vec3& feature, double fov_deg);

std::vector<std::optional<Vec3>> observe(const Pose& pose, const Points& features, const SensorParams& sensor,
                                         std::mt19937_64& rng);

/// Coefficients c (length `window`) for which the prior holds exactly for any
/// combination of the given periods plus a constant. Throws PreconditionError
/// when 2·|periods| + 1 exceeds the window.
Eigen::VectorXd exact_prior_coefficients(const std::vector<double>& periods, int window);

/// Full generation of run `run`. Feature layouts are redrawn (deterministically)
/// until every consecutive step pair has min_covisible shared observations.
/// Throws UnsolvableInstanceError after 200 failed layouts.
SimulatedDataset simulate(const SimConfig& config, int run = 0, int window = 5);

struct RmseMetrics {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double heading = 0.0;       ///< radians
    double feature = 0.0;

    double position() const;    ///< hypot of the x and y RMSE
};

/// Heading angle of a world-to-robot rotation about the workspace normal.
double heading_of(const Rotation& world_to_robot);

/// Throws DimensionMismatchError on step-count mismatch.
RmseMetrics evaluate_rmse(const TrajectoryState& estimate, const TrajectoryState& truth, bool planar);

}  // namespace defslam
