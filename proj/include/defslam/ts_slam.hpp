#pragma once

// Time-series-prior deformable SLAM back-end and its two comparison baselines.
//
// State: per-step robot rotation R^j (world to robot) and position p^j, the
// per-step feature positions f_i^j (shape matrix B, 3N×F) and one global
// coefficient vector c = [δ_1 … δ_t]. Observations are feature positions in
// the robot frame, z = R(f − p). Each feature is modelled as a linear
// combination of its t previous positions:
//
//   f^{n+1} = δ_1 f^n + δ_2 f^{n−1} + … + δ_t f^{n+1−t}
//
// Energy: E_obs + E_f + E_ini (+ ε_c |c|² to pin the unobservable part of c).

#include <optional>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "defslam/ed_graph.hpp"
#include "defslam/levenberg_marquardt.hpp"
#include "defslam/lie.hpp"

namespace defslam {

/// Feature history B (3N×F) with an N×F validity mask.
class ShapeMatrix {
public:
    ShapeMatrix() = default;
    ShapeMatrix(int features, int steps);

    int features() const { return features_; }
    int steps() const { return steps_; }

    Vec3 at(int feature, int step) const { return b_.block<3, 1>(3 * feature, step); }
    void set(int feature, int step, const Vec3& f) { b_.block<3, 1>(3 * feature, step) = f; }

    bool valid(int feature, int step) const { return valid_[index(feature, step)] != 0; }
    void set_valid(int feature, int step, bool v) { valid_[index(feature, step)] = v ? 1 : 0; }

    /// True when the feature is valid at every step last − t … last.
    bool window_valid(int feature, int last, int window) const;

    const Eigen::MatrixXd& matrix() const { return b_; }

private:
    std::size_t index(int feature, int step) const {
        return static_cast<std::size_t>(feature) * static_cast<std::size_t>(steps_) +
               static_cast<std::size_t>(step);
    }

    int features_ = 0;
    int steps_ = 0;
    Eigen::MatrixXd b_;
    std::vector<char> valid_;
};

struct TrajectoryState {
    std::vector<Rotation> rotations;
    std::vector<Vec3> positions;
    ShapeMatrix shapes;
    Eigen::VectorXd coeffs;

    int steps() const { return static_cast<int>(rotations.size()); }
    int features() const { return shapes.features(); }
};

/// z[i][j]: robot-frame observation of feature i at step j, absent when unseen.
class ObservationSet {
public:
    ObservationSet() = default;
    ObservationSet(int features, int steps);

    int features() const { return features_; }
    int steps() const { return steps_; }

    const std::optional<Vec3>& at(int feature, int step) const { return z_[index(feature, step)]; }
    void set(int feature, int step, const Vec3& z) { z_[index(feature, step)] = z; }
    void clear(int feature, int step) { z_[index(feature, step)].reset(); }
    bool visible(int feature, int step) const { return at(feature, step).has_value(); }

    std::size_t count() const;

private:
    std::size_t index(int feature, int step) const {
        return static_cast<std::size_t>(feature) * static_cast<std::size_t>(steps_) +
               static_cast<std::size_t>(step);
    }

    int features_ = 0;
    int steps_ = 0;
    std::vector<std::optional<Vec3>> z_;
};

struct SolverConfig {
    int max_iterations = 100;
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.1;
    double gradient_tolerance = 1e-10;
    double step_tolerance = 1e-10;
    double function_tolerance = 1e-10;   ///< relative energy decrease
    int window = 5;                        ///< t
    double coeff_regularization = 1e-8;    ///< ε_c
    double w_obs = 1.0;
    double w_f = 1.0;
    double w_ini = 1e6;
    bool fix_coefficients = false;         ///< hold c at its initial value
    Rotation anchor_rotation;              ///< R⁰
    Vec3 anchor_position = Vec3::Zero();   ///< p⁰

    /// Throws SchemaError on non-positive tolerances or window < 1.
    void validate() const;
    LmOptions lm_options() const;
};

/// Energy split of a time-series or rigid state.
struct EnergyBreakdown {
    double obs = 0.0;
    double prior = 0.0;           ///< E_f (zero for the rigid model)
    double anchor = 0.0;          ///< E_ini
    double regularizer = 0.0;     ///< ε_c |c|²

    /// The objective without the numerical coefficient regularizer.
    double model() const { return obs + prior + anchor; }
    double total() const { return model() + regularizer; }
};

struct SolveReport {
    std::string method;
    LmReport lm;
    EnergyBreakdown energy;
};

struct TermValue {
    double energy = 0.0;
    Eigen::VectorXd residuals;
};

/// R·(f − p).
Vec3 observe_model(const Rotation& r, const Vec3& p, const Vec3& f);

/// Σ_k δ_k · history[k−1]; history is ordered most recent first.
/// Throws DimensionMismatchError when sizes differ.
Vec3 predict_feature(std::span<const Vec3> history, const Eigen::VectorXd& coeffs);

/// c = [1, 0, …, 0]: every shape equals the previous one.
Eigen::VectorXd static_prior_coefficients(int window);

/// Unweighted energy terms; residual ordering matches TimeSeriesProblem.
TermValue e_obs(const TrajectoryState& state, const ObservationSet& obs);
TermValue e_f(const TrajectoryState& state);
TermValue e_ini(const TrajectoryState& state, const SolverConfig& config);

enum class FeatureModel {
    TimeSeries,   ///< one position per (feature, step) tied by the linear prior
    Static,       ///< one position per feature (rigid SLAM)
};

/// Sparse least-squares form of the SLAM energy.
///
/// Tangent layout: per step [θ_j (3), p_j (3)] with R^j ← R^j·exp(θ_j), then
/// one 3-block per feature variable, then c (unless fixed). Residual layout:
/// observations (step-major), prior windows (feature-major), anchors, and the
/// coefficient regularizer, each scaled by the square root of its weight.
class TimeSeriesProblem {
public:
    TimeSeriesProblem(const ObservationSet& obs, const SolverConfig& config, FeatureModel model);

    Eigen::Index tangent_dim() const { return tangent_dim_; }
    Eigen::Index coefficient_offset() const { return coeff_offset_; }
    bool coefficients_free() const { return coeffs_free_; }
    int window_count() const { return static_cast<int>(windows_.size()); }

    /// Skip the ε_c rows (used for information-matrix analysis).
    void set_include_regularizer(bool on) { include_regularizer_ = on; }

    Eigen::VectorXd residuals(const TrajectoryState& state) const;
    Eigen::SparseMatrix<double> jacobian(const TrajectoryState& state) const;
    TrajectoryState retract(const TrajectoryState& state, const Eigen::VectorXd& delta) const;
    EnergyBreakdown energy(const TrajectoryState& state) const;

private:
    struct Window {
        int feature;
        int last;
    };
    int variable(int feature, int step) const {
        return var_[static_cast<std::size_t>(feature) * static_cast<std::size_t>(steps_) +
                    static_cast<std::size_t>(step)];
    }

    ObservationSet obs_;
    SolverConfig config_;
    FeatureModel model_;
    int steps_ = 0;
    int features_ = 0;
    int window_ = 0;
    bool coeffs_free_ = false;
    bool include_regularizer_ = true;
    std::vector<int> var_;          // feature variable per (feature, step), −1 if none
    std::vector<Window> windows_;
    int variable_count_ = 0;
    Eigen::Index coeff_offset_ = 0;
    Eigen::Index tangent_dim_ = 0;
    Eigen::Index obs_rows_ = 0;
};

/// Visual-odometry initialization: closed-form rigid alignment of co-visible
/// observations between consecutive steps, chained from the anchor; features
/// back-projected; c = [1, 0, …, 0]. Throws InitializationGapError.
TrajectoryState initialize_state(const ObservationSet& obs, const SolverConfig& config);

/// Minimizes E_obs + E_f + E_ini from the VO initialization.
std::pair<TrajectoryState, SolveReport> solve(const ObservationSet& obs, const SolverConfig& config);

/// Minimizes E_obs + E_f + E_ini from a caller-supplied state.
std::pair<TrajectoryState, SolveReport> solve(const ObservationSet& obs, const SolverConfig& config,
                                              TrajectoryState initial);

/// Classical back-end least squares with one static position per feature.
std::pair<TrajectoryState, SolveReport> rigid_slam_solve(const ObservationSet& obs,
                                                         const SolverConfig& config);

// ---------------------------------------------------------------------------
// ED-node visual odometry baseline.

struct EdVoConfig {
    static LmOptions default_lm() {
        LmOptions o;
        o.function_tolerance = 1e-10;
        return o;
    }

    EdEnergyWeights weights{1.0, 1.0, 1.0};
    int k_influence = 4;
    std::size_t graph_k = 4;          ///< node-graph neighbours per node
    double node_fraction = 0.5;       ///< nodes sampled per co-visible point
    bool freeze_nodes = false;        ///< estimate only (Rc, Tc)
    LmOptions lm = default_lm();
    Rotation anchor_rotation;
    Vec3 anchor_position = Vec3::Zero();
};

struct EdPairFit {
    EdState state;
    LmReport lm;
    double energy = 0.0;
};

/// Deformation graph with identity nodes on a farthest-point subsample of `source`.
EdGraph make_vo_graph(const Points& source, const EdVoConfig& config);

/// Fits ED deformation plus global pose mapping `source` onto `target`.
/// Starts from identity nodes and pose unless `initial` is given.
EdPairFit fit_ed_pair(const Points& source, const Points& target, const EdVoConfig& config,
                      const EdState* initial = nullptr);

struct EdVoReport {
    std::vector<EdPairFit> pairs;
    int total_iterations = 0;
};

/// Chains per-pair global poses into a trajectory; features are back-projected
/// from the chained poses. Throws InitializationGapError / DegenerateGraphError.
std::pair<TrajectoryState, EdVoReport> ed_vo_solve(const ObservationSet& obs, const EdVoConfig& config);

}  // namespace defslam
