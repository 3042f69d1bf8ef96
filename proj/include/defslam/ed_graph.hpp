#pragma once

// Embedded deformation graph: a sparse set of nodes, each carrying a local
// affine map, whose distance-weighted blend warps nearby points. A global
// rigid pose (Rc, Tc) is applied on top of the blended warp:
//
//   warp(v) = Rc · Σ_j w_j(v) [A_j (v − g_j) + g_j + t_j] + Tc
//
// All lengths are millimetres.

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "defslam/lie.hpp"

namespace defslam {

/// 3×n matrix of points, one per column.
using Points = Eigen::Matrix3Xd;

struct EdNode {
    Vec3 g = Vec3::Zero();          ///< node position
    Mat3 A = Mat3::Identity();      ///< local affine matrix
    Vec3 t = Vec3::Zero();          ///< local translation
};

struct Neighbor {
    std::size_t index = 0;
    double alpha = 1.0;             ///< overlap influence of the edge
};

struct EdGraph {
    std::vector<EdNode> nodes;
    std::vector<std::vector<Neighbor>> neighbors;  ///< N(j), symmetric
    int k_influence = 4;                           ///< deforming nodes per point

    std::size_t size() const { return nodes.size(); }

    /// Checks finiteness, symmetric adjacency, alpha > 0 and k_influence >= 1.
    /// Throws SchemaError.
    void validate() const;

    /// Node positions as a 3×m matrix.
    Points positions() const;
};

/// Graph with identity deformation at `positions`, each node linked to its
/// `graph_k` nearest nodes (relation symmetrized, alpha = 1).
EdGraph make_knn_graph(const Points& positions, std::size_t graph_k, int k_influence = 4);

struct GlobalPose {
    Rotation rotation;              ///< Rc
    Vec3 translation = Vec3::Zero();  ///< Tc
};

struct EdEnergyWeights {
    double rot = 1.0;
    double reg = 1.0;
    double data = 1.0;

    /// Throws SchemaError if any weight is negative or all are zero.
    void validate() const;
};

struct NodeWeight {
    std::size_t node = 0;
    double weight = 0.0;
};

/// Normalized weights of the k_influence nearest nodes of `v`.
///
/// Raw weights are 1 − |v − g_j| / d_max, with d_max the distance to the
/// (k+1)-th nearest node; they are then divided by their sum. Ties in
/// distance go to the lower node index. Throws DegenerateGraphError when the
/// graph has fewer than k+1 nodes or d_max is zero.
std::vector<NodeWeight> compute_weights(const Vec3& v, const EdGraph& graph);

Vec3 warp_point(const Vec3& v, const EdGraph& graph, const GlobalPose& pose);

/// Matrix form of the warp. M (3m×n) holds w_j(v_i)(v_i − g_j) in block row j,
/// C (m×n) holds w_j(v_i); Lambda = [A_1 … A_m] (3×3m) and T = [t_1+g_1 … t_m+g_m] (3×m).
struct InfluenceMatrices {
    Eigen::MatrixXd M;
    Eigen::MatrixXd C;
    Eigen::MatrixXd Lambda;
    Eigen::MatrixXd T;

    /// Λ·M + T·C: the blended warp of every point before the global pose.
    Points blended() const { return Lambda * M + T * C; }
};

InfluenceMatrices build_influence_matrices(const Points& points, const EdGraph& graph);

/// Refreshes Lambda and T from the graph, keeping M and C.
void update_node_blocks(InfluenceMatrices& mats, const EdGraph& graph);

struct DataTerm {
    Points residual;        ///< Rc[ΛM + TC] + Tc⊗1 − P̂
    double energy = 0.0;    ///< squared Frobenius norm of `residual`
};

DataTerm e_data(const Points& points, const EdGraph& graph, const GlobalPose& pose,
                const Points& targets);
DataTerm e_data(const InfluenceMatrices& mats, const GlobalPose& pose, const Points& targets);

/// The six orthonormality residuals of A's columns c1, c2, c3:
/// [c1·c2, c1·c3, c2·c3, c1·c1 − 1, c2·c2 − 1, c3·c3 − 1].
Eigen::Matrix<double, 6, 1> rotation_residuals(const Mat3& A);
double rot_term(const Mat3& A);

double e_rot(const EdGraph& graph);
double e_reg(const EdGraph& graph);

/// w_rot·E_rot + w_reg·E_reg + w_data·E_data.
double total_energy(const Points& points, const EdGraph& graph, const GlobalPose& pose,
                    const Points& targets, const EdEnergyWeights& weights);

struct EdState {
    GlobalPose pose;
    EdGraph graph;
};

/// Rc' = Rc·V0, A_j' = V0ᵀA_j, t_j' = V0ᵀ(t_j + g_j) − g_j.
EdState gauge_rotate(const EdState& state, const Rotation& v0);

/// Tc' = Tc − dT, t_j' = t_j + Rcᵀ·dT.
EdState gauge_translate(const EdState& state, const Vec3& dt);

// ---------------------------------------------------------------------------
// Full-energy least-squares form.
//
// Tangent layout: for each node j, [vec(A_j) column-major (9), t_j (3)], then
// the rotation increment θ (Rc ← Rc·exp(θ)) and Tc. Residual layout: data
// (3n), orthonormality (6m), regularization (3 per directed edge), each block
// scaled by the square root of its weight so that |r|² equals total_energy.

struct EdProblem {
    Points source;
    Points targets;
    EdEnergyWeights weights;
};

Eigen::Index ed_tangent_dim(const EdGraph& graph);
Eigen::Index ed_residual_dim(const EdProblem& problem, const EdGraph& graph);

Eigen::VectorXd ed_residuals(const EdProblem& problem, const EdState& state);
Eigen::MatrixXd ed_jacobian(const EdProblem& problem, const EdState& state);
EdState ed_retract(const EdState& state, const Eigen::VectorXd& delta);

}  // namespace defslam
