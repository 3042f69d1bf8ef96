#pragma once

// Jacobian / Fisher-information assembly and numerical rank analysis for the
// ED formulation and for the time-series formulation.

#include <array>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "defslam/ed_graph.hpp"
#include "defslam/lie.hpp"
#include "defslam/ts_slam.hpp"

namespace defslam {

struct FimReport {
    Eigen::VectorXd singular_values;   ///< descending
    int rank = 0;
    int nullity = 0;
    Eigen::MatrixXd null_basis;        ///< orthonormal columns
    double tolerance_used = 0.0;       ///< relative to the largest singular value

    int dimension() const { return rank + nullity; }
};

/// Residual as a function of a tangent increment applied to a fixed base state.
using IncrementFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central differences: column k is (r(h·e_k) − r(−h·e_k)) / 2h.
/// Throws NonFiniteError if any probe is non-finite.
Eigen::MatrixXd numeric_jacobian(const IncrementFn& residual, Eigen::Index dim, double step = 1e-6);

/// Gauss-Newton information JᵀJ.
Eigen::MatrixXd fim(const Eigen::MatrixXd& jacobian);

/// Spectrum, rank and null basis of a symmetric matrix. An all-zero input
/// gives rank 0. Throws DimensionMismatchError for non-square input.
FimReport rank_analysis(const Eigen::MatrixXd& fim, double rel_tol = 1e-8);

/// Rank analysis of D^-1/2·F·D^-1/2 with D = diag(F), which removes the
/// dependence on units (mm against radians against dimensionless
/// coefficients). Rank and nullity are those of F; the null basis is mapped
/// back to the original coordinates and re-orthonormalized.
FimReport scaled_rank_analysis(const Eigen::MatrixXd& fim, double rel_tol = 1e-8);

/// Squared norm fraction of the null basis that lies in rows [offset, offset+count).
double null_share(const FimReport& report, Eigen::Index offset, Eigen::Index count);

// ---------------------------------------------------------------------------
// Single-point ED data term: r = Rc(ΛM + TC) + Tc − target.
//
// Tangent layout: [vec(Λ) column-major (9m), vec(T) column-major (3m), θ, Tc]
// with Rc ← Rc·exp(θ).

struct EdPointInstance {
    Vec3 point = Vec3::Zero();
    Vec3 target = Vec3::Zero();
    EdGraph graph;
    GlobalPose pose;

    Eigen::Index tangent_dim() const { return 12 * static_cast<Eigen::Index>(graph.size()) + 6; }
};

Vec3 ed_point_residual(const EdPointInstance& instance);
EdPointInstance ed_point_retract(const EdPointInstance& instance, const Eigen::VectorXd& delta);
Eigen::MatrixXd assemble_ed_jacobian(const EdPointInstance& instance);

struct HessianLawReport {
    double h2_error = 0.0;         ///< max |H₂(j) − c_j·RcᵀH₄|
    double h1_error = 0.0;         ///< max |P·H₁(c) − m_c·(−(Sᵀ)⁺H₃)|
    double tolerance = 0.0;        ///< absolute, 1e-10·max(1, max|H|)
    int hessian_rank = 0;
    int hessian_nullity = 0;

    bool h2_holds() const { return h2_error <= tolerance; }
    bool h1_holds() const { return h1_error <= tolerance; }
    /// H = JᵀJ with J of three rows, so at most rank 3.
    bool rank_deficient() const { return hessian_rank <= 3; }
    bool passed() const { return h2_holds() && h1_holds() && rank_deficient(); }
};

/// Checks that the Λ and T block rows of the single-point Hessian follow from
/// the θ and Tc block rows.
HessianLawReport check_hessian_law(const EdPointInstance& instance);

// ---------------------------------------------------------------------------
// Full ED energy.

Eigen::MatrixXd ed_fim(const EdProblem& problem, const EdState& state);

/// Tangent d with b ≈ ed_retract(a, d) (exact for the vector parts).
Eigen::VectorXd ed_local_difference(const EdState& a, const EdState& b);

/// Six tangent directions at `state`: three from gauge_rotate(exp(ε e_i)) and
/// three from gauge_translate(ε e_i), each by central differences at ε.
Eigen::MatrixXd gauge_tangent_directions(const EdState& state, double eps = 1e-6);

struct GaugeReport {
    Eigen::MatrixXd directions;                ///< tangent_dim × 6
    std::array<double, 6> ratios{};            ///< |J v| / (|J|₂ |v|)
    double max_residual = 0.0;
    double tolerance = 1e-8;

    bool passed() const;
};

/// Ratios for the gauge directions at any state, without the zero-residual check.
GaugeReport gauge_null_ratios(const EdProblem& problem, const EdState& state, double tolerance = 1e-8);

/// As gauge_null_ratios, after requiring every residual to be ≤ 1e-10 in
/// magnitude. Throws PreconditionError otherwise.
GaugeReport verify_gauge_null_directions(const EdProblem& problem, const EdState& state,
                                         double tolerance = 1e-8);

// ---------------------------------------------------------------------------
// Three-step toy model with window 2.
//
// Each feature contributes observations at steps 1–3 and one prior row
// f³ − δ₁f² − δ₂f¹; the first two poses are anchored at identity / origin.
// Tangent layout: per step [θ_j, p_j], then per feature [f¹, f², f³], then
// (δ₁, δ₂).

struct ToyInstance {
    std::array<Rotation, 3> rotations;
    std::array<Vec3, 3> positions{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    std::vector<std::array<Vec3, 3>> features;      ///< per feature f¹, f², f³
    std::vector<std::array<Vec3, 3>> observations;  ///< per feature z₁, z₂, z₃
    Eigen::Vector2d delta = Eigen::Vector2d(1.0, 0.0);

    int feature_count() const { return static_cast<int>(features.size()); }
    Eigen::Index tangent_dim() const { return 18 + 9 * static_cast<Eigen::Index>(features.size()) + 2; }
    /// Throws DimensionMismatchError / NonFiniteError.
    void validate() const;
};

Eigen::VectorXd toy_objective(const ToyInstance& instance);
Eigen::MatrixXd toy_jacobian(const ToyInstance& instance);
ToyInstance toy_retract(const ToyInstance& instance, const Eigen::VectorXd& delta);
/// Scaled rank analysis of the toy FIM.
FimReport toy_fim(const ToyInstance& instance, double rel_tol = 1e-8);

/// Offset of (δ₁, δ₂) in the toy tangent.
inline Eigen::Index toy_delta_offset(const ToyInstance& instance) { return instance.tangent_dim() - 2; }

// ---------------------------------------------------------------------------
// Time-series formulation.

struct TimeSeriesFim {
    FimReport report;
    Eigen::Index coefficient_offset = 0;
    Eigen::Index coefficient_count = 0;     ///< 0 when c is fixed
    double coefficient_share = 0.0;         ///< null-basis mass on c (0 if full rank)
};

/// Scaled rank analysis of the FIM of E_obs + E_f + E_ini at `state` (the ε_c
/// rows are left out).
TimeSeriesFim timeseries_fim(const ObservationSet& obs, const TrajectoryState& state,
                             const SolverConfig& config, double rel_tol = 1e-8);

}  // namespace defslam
