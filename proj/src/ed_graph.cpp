#include "defslam/ed_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "defslam/errors.hpp"

namespace defslam {

void EdGraph::validate() const {
    if (k_influence < 1) throw SchemaError("k_influence must be >= 1");
    if (neighbors.size() != nodes.size()) {
        throw SchemaError("neighbor list count " + std::to_string(neighbors.size()) +
                          " does not match node count " + std::to_string(nodes.size()));
    }
    for (std::size_t j = 0; j < nodes.size(); ++j) {
        const EdNode& n = nodes[j];
        if (!n.g.allFinite() || !n.A.allFinite() || !n.t.allFinite()) {
            throw SchemaError("node " + std::to_string(j) + " has non-finite entries");
        }
        for (const Neighbor& nb : neighbors[j]) {
            if (nb.index >= nodes.size() || nb.index == j) {
                throw SchemaError("node " + std::to_string(j) + " has invalid neighbor " +
                                  std::to_string(nb.index));
            }
            if (!(nb.alpha > 0.0)) {
                throw SchemaError("edge " + std::to_string(j) + "-" + std::to_string(nb.index) +
                                  " has non-positive alpha");
            }
            const auto& back = neighbors[nb.index];
            const bool symmetric = std::any_of(back.begin(), back.end(),
                                               [j](const Neighbor& b) { return b.index == j; });
            if (!symmetric) {
                throw SchemaError("neighbor relation is not symmetric at edge " +
                                  std::to_string(j) + "-" + std::to_string(nb.index));
            }
        }
    }
}

Points EdGraph::positions() const {
    Points p(3, static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t j = 0; j < nodes.size(); ++j) p.col(static_cast<Eigen::Index>(j)) = nodes[j].g;
    return p;
}

EdGraph make_knn_graph(const Points& positions, std::size_t graph_k, int k_influence) {
    const auto m = static_cast<std::size_t>(positions.cols());
    EdGraph graph;
    graph.k_influence = k_influence;
    graph.nodes.resize(m);
    graph.neighbors.resize(m);
    for (std::size_t j = 0; j < m; ++j) graph.nodes[j].g = positions.col(static_cast<Eigen::Index>(j));

    std::vector<std::vector<bool>> linked(m, std::vector<bool>(m, false));
    for (std::size_t j = 0; j < m; ++j) {
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const Vec3 gj = graph.nodes[j].g;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return (graph.nodes[a].g - gj).squaredNorm() < (graph.nodes[b].g - gj).squaredNorm();
        });
        std::size_t added = 0;
        for (std::size_t idx : order) {
            if (idx == j) continue;
            if (added++ == graph_k) break;
            linked[j][idx] = linked[idx][j] = true;
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k < m; ++k) {
            if (linked[j][k]) graph.neighbors[j].push_back({k, 1.0});
        }
    }
    return graph;
}

void EdEnergyWeights::validate() const {
    if (!(rot >= 0.0 && reg >= 0.0 && data >= 0.0)) throw SchemaError("energy weights must be >= 0");
    if (rot == 0.0 && reg == 0.0 && data == 0.0) throw SchemaError("energy weights are all zero");
}

std::vector<NodeWeight> compute_weights(const Vec3& v, const EdGraph& graph) {
    const std::size_t m = graph.nodes.size();
    const auto k = static_cast<std::size_t>(graph.k_influence);
    if (m < k + 1) {
        throw DegenerateGraphError("graph has " + std::to_string(m) + " nodes; need at least " +
                                   std::to_string(k + 1));
    }
    std::vector<std::pair<double, std::size_t>> dist(m);
    for (std::size_t j = 0; j < m; ++j) dist[j] = {(v - graph.nodes[j].g).norm(), j};
    // Pairs order by (distance, index), so ties go to the lower index.
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k + 1), dist.end());

    const double d_max = dist[k].first;
    if (!(d_max > 0.0)) throw DegenerateGraphError("distance to the (k+1)-th node is zero");

    std::vector<NodeWeight> out(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = {dist[i].second, std::max(0.0, 1.0 - dist[i].first / d_max)};
        sum += out[i].weight;
    }
    if (!(sum > 0.0)) throw DegenerateGraphError("all influencing nodes lie at distance d_max");
    for (auto& w : out) w.weight /= sum;
    return out;
}

Vec3 warp_point(const Vec3& v, const EdGraph& graph, const GlobalPose& pose) {
    Vec3 blended = Vec3::Zero();
    for (const NodeWeight& nw : compute_weights(v, graph)) {
        const EdNode& n = graph.nodes[nw.node];
        blended += nw.weight * (n.A * (v - n.g) + n.g + n.t);
    }
    return pose.rotation * blended + pose.translation;
}

void update_node_blocks(InfluenceMatrices& mats, const EdGraph& graph) {
    const auto m = static_cast<Eigen::Index>(graph.nodes.size());
    mats.Lambda.resize(3, 3 * m);
    mats.T.resize(3, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const EdNode& n = graph.nodes[static_cast<std::size_t>(j)];
        mats.Lambda.block<3, 3>(0, 3 * j) = n.A;
        mats.T.col(j) = n.t + n.g;
    }
}

InfluenceMatrices build_influence_matrices(const Points& points, const EdGraph& graph) {
    const auto m = static_cast<Eigen::Index>(graph.nodes.size());
    const Eigen::Index n = points.cols();
    InfluenceMatrices mats;
    mats.M = Eigen::MatrixXd::Zero(3 * m, n);
    mats.C = Eigen::MatrixXd::Zero(m, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 v = points.col(i);
        for (const NodeWeight& nw : compute_weights(v, graph)) {
            const auto j = static_cast<Eigen::Index>(nw.node);
            mats.M.block<3, 1>(3 * j, i) = nw.weight * (v - graph.nodes[nw.node].g);
            mats.C(j, i) = nw.weight;
        }
    }
    update_node_blocks(mats, graph);
    return mats;
}

DataTerm e_data(const InfluenceMatrices& mats, const GlobalPose& pose, const Points& targets) {
    if (targets.cols() != mats.C.cols()) {
        throw DimensionMismatchError("target count " + std::to_string(targets.cols()) +
                                     " does not match point count " + std::to_string(mats.C.cols()));
    }
    DataTerm out;
    out.residual = (pose.rotation.matrix() * mats.blended()).colwise() + pose.translation;
    out.residual -= targets;
    out.energy = out.residual.squaredNorm();
    return out;
}

DataTerm e_data(const Points& points, const EdGraph& graph, const GlobalPose& pose,
                const Points& targets) {
    if (targets.cols() != points.cols()) {
        throw DimensionMismatchError("target count " + std::to_string(targets.cols()) +
                                     " does not match point count " + std::to_string(points.cols()));
    }
    return e_data(build_influence_matrices(points, graph), pose, targets);
}

Eigen::Matrix<double, 6, 1> rotation_residuals(const Mat3& A) {
    const auto c1 = A.col(0), c2 = A.col(1), c3 = A.col(2);
    Eigen::Matrix<double, 6, 1> r;
    r << c1.dot(c2), c1.dot(c3), c2.dot(c3),
         c1.dot(c1) - 1.0, c2.dot(c2) - 1.0, c3.dot(c3) - 1.0;
    return r;
}

double rot_term(const Mat3& A) { return rotation_residuals(A).squaredNorm(); }

double e_rot(const EdGraph& graph) {
    double sum = 0.0;
    for (const EdNode& n : graph.nodes) sum += rot_term(n.A);
    return sum;
}

namespace {

Vec3 reg_residual(const EdNode& nj, const EdNode& nk) {
    return nj.A * (nk.g - nj.g) + nj.g + nj.t - (nk.g + nk.t);
}

}  // namespace

double e_reg(const EdGraph& graph) {
    double sum = 0.0;
    for (std::size_t j = 0; j < graph.nodes.size(); ++j) {
        for (const Neighbor& nb : graph.neighbors[j]) {
            sum += nb.alpha * reg_residual(graph.nodes[j], graph.nodes[nb.index]).squaredNorm();
        }
    }
    return sum;
}

double total_energy(const Points& points, const EdGraph& graph, const GlobalPose& pose,
                    const Points& targets, const EdEnergyWeights& weights) {
    return weights.rot * e_rot(graph) + weights.reg * e_reg(graph) +
           weights.data * e_data(points, graph, pose, targets).energy;
}

EdState gauge_rotate(const EdState& state, const Rotation& v0) {
    EdState out = state;
    const Mat3 vt = v0.matrix().transpose();
    out.pose.rotation = state.pose.rotation * v0;
    for (EdNode& n : out.graph.nodes) {
        n.A = vt * n.A;
        n.t = vt * (n.t + n.g) - n.g;
    }
    return out;
}

EdState gauge_translate(const EdState& state, const Vec3& dt) {
    EdState out = state;
    out.pose.translation = state.pose.translation - dt;
    const Vec3 offset = state.pose.rotation.matrix().transpose() * dt;
    for (EdNode& n : out.graph.nodes) n.t += offset;
    return out;
}

Eigen::Index ed_tangent_dim(const EdGraph& graph) {
    return 12 * static_cast<Eigen::Index>(graph.nodes.size()) + 6;
}

namespace {

Eigen::Index edge_count(const EdGraph& graph) {
    Eigen::Index e = 0;
    for (const auto& nbs : graph.neighbors) e += static_cast<Eigen::Index>(nbs.size());
    return e;
}

}  // namespace

Eigen::Index ed_residual_dim(const EdProblem& problem, const EdGraph& graph) {
    return 3 * problem.source.cols() + 6 * static_cast<Eigen::Index>(graph.nodes.size()) +
           3 * edge_count(graph);
}

Eigen::VectorXd ed_residuals(const EdProblem& problem, const EdState& state) {
    const EdGraph& graph = state.graph;
    const Eigen::Index n = problem.source.cols();
    const auto m = static_cast<Eigen::Index>(graph.nodes.size());
    Eigen::VectorXd r(ed_residual_dim(problem, graph));

    const DataTerm data = e_data(problem.source, graph, state.pose, problem.targets);
    r.head(3 * n) = std::sqrt(problem.weights.data) *
                    Eigen::Map<const Eigen::VectorXd>(data.residual.data(), 3 * n);

    const double sr = std::sqrt(problem.weights.rot);
    for (Eigen::Index j = 0; j < m; ++j) {
        r.segment<6>(3 * n + 6 * j) = sr * rotation_residuals(graph.nodes[static_cast<std::size_t>(j)].A);
    }

    Eigen::Index row = 3 * n + 6 * m;
    for (std::size_t j = 0; j < graph.nodes.size(); ++j) {
        for (const Neighbor& nb : graph.neighbors[j]) {
            r.segment<3>(row) = std::sqrt(problem.weights.reg * nb.alpha) *
                                reg_residual(graph.nodes[j], graph.nodes[nb.index]);
            row += 3;
        }
    }
    return r;
}

Eigen::MatrixXd ed_jacobian(const EdProblem& problem, const EdState& state) {
    const EdGraph& graph = state.graph;
    const Eigen::Index n = problem.source.cols();
    const auto m = static_cast<Eigen::Index>(graph.nodes.size());
    const Eigen::Index rot_col = 12 * m;
    const Eigen::Index trans_col = 12 * m + 3;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(ed_residual_dim(problem, graph), ed_tangent_dim(graph));
    const Mat3& Rc = state.pose.rotation.matrix();

    const double sd = std::sqrt(problem.weights.data);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 v = problem.source.col(i);
        Vec3 blended = Vec3::Zero();
        for (const NodeWeight& nw : compute_weights(v, graph)) {
            const EdNode& node = graph.nodes[nw.node];
            const auto col = 12 * static_cast<Eigen::Index>(nw.node);
            const Vec3 mv = nw.weight * (v - node.g);
            for (int c = 0; c < 3; ++c) J.block<3, 3>(3 * i, col + 3 * c) = sd * mv(c) * Rc;
            J.block<3, 3>(3 * i, col + 9) = sd * nw.weight * Rc;
            blended += nw.weight * (node.A * (v - node.g) + node.g + node.t);
        }
        J.block<3, 3>(3 * i, rot_col) = -sd * Rc * skew(blended);
        J.block<3, 3>(3 * i, trans_col) = sd * Mat3::Identity();
    }

    const double sr = std::sqrt(problem.weights.rot);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Mat3& A = graph.nodes[static_cast<std::size_t>(j)].A;
        const Eigen::Index row = 3 * n + 6 * j;
        const Eigen::Index col = 12 * j;
        // Column c of A occupies tangent entries col + 3c .. col + 3c + 2.
        const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
        for (int p = 0; p < 3; ++p) {
            const int a = pairs[p][0], b = pairs[p][1];
            J.block<1, 3>(row + p, col + 3 * a) = sr * A.col(b).transpose();
            J.block<1, 3>(row + p, col + 3 * b) = sr * A.col(a).transpose();
        }
        for (int c = 0; c < 3; ++c) J.block<1, 3>(row + 3 + c, col + 3 * c) = 2.0 * sr * A.col(c).transpose();
    }

    Eigen::Index row = 3 * n + 6 * m;
    for (std::size_t j = 0; j < graph.nodes.size(); ++j) {
        for (const Neighbor& nb : graph.neighbors[j]) {
            const double s = std::sqrt(problem.weights.reg * nb.alpha);
            const Vec3 d = graph.nodes[nb.index].g - graph.nodes[j].g;
            const auto cj = 12 * static_cast<Eigen::Index>(j);
            const auto ck = 12 * static_cast<Eigen::Index>(nb.index);
            for (int c = 0; c < 3; ++c) J.block<3, 3>(row, cj + 3 * c) = s * d(c) * Mat3::Identity();
            J.block<3, 3>(row, cj + 9) += s * Mat3::Identity();
            J.block<3, 3>(row, ck + 9) -= s * Mat3::Identity();
            row += 3;
        }
    }
    return J;
}

EdState ed_retract(const EdState& state, const Eigen::VectorXd& delta) {
    if (delta.size() != ed_tangent_dim(state.graph)) {
        throw DimensionMismatchError("ED tangent increment has wrong size");
    }
    EdState out = state;
    const auto m = static_cast<Eigen::Index>(state.graph.nodes.size());
    for (Eigen::Index j = 0; j < m; ++j) {
        EdNode& node = out.graph.nodes[static_cast<std::size_t>(j)];
        node.A += Eigen::Map<const Mat3>(delta.data() + 12 * j);
        node.t += delta.segment<3>(12 * j + 9);
    }
    out.pose.rotation = state.pose.rotation * exp_rotation(delta.segment<3>(12 * m));
    out.pose.translation += delta.segment<3>(12 * m + 3);
    return out;
}

}  // namespace defslam
