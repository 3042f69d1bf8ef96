#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "defslam/ed_graph.hpp"
#include "defslam/errors.hpp"
#include "defslam/fixtures.hpp"
#include "defslam/observability.hpp"
#include "helpers.hpp"

using namespace defslam;
using defslam::test::uniform;

namespace {

Points random_points(std::mt19937_64& rng, int n, double extent = 100.0) {
    Points p(3, n);
    for (int i = 0; i < n; ++i) p.col(i) = random_vector(rng, extent);
    return p;
}

// Brute force: sort every node distance, weight the k nearest by 1 − d/d_{k+1}, normalize.
std::vector<double> weight_oracle(const Vec3& v, const EdGraph& g) {
    const std::size_t m = g.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> d(m);
    for (std::size_t j = 0; j < m; ++j) d[j] = (v - g.nodes[j].g).norm();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    const auto k = static_cast<std::size_t>(g.k_influence);
    const double dmax = d[order[k]];
    std::vector<double> w(m, 0.0);
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        w[order[r]] = 1.0 - d[order[r]] / dmax;
        sum += w[order[r]];
    }
    for (double& x : w) x /= sum;
    return w;
}

Vec3 warp_oracle(const Vec3& v, const EdGraph& g, const GlobalPose& pose) {
    const std::vector<double> w = weight_oracle(v, g);
    Vec3 sum = Vec3::Zero();
    for (std::size_t j = 0; j < g.size(); ++j) {
        for (int r = 0; r < 3; ++r) {
            double acc = g.nodes[j].g(r) + g.nodes[j].t(r);
            for (int c = 0; c < 3; ++c) acc += g.nodes[j].A(r, c) * (v(c) - g.nodes[j].g(c));
            sum(r) += w[j] * acc;
        }
    }
    return pose.rotation.matrix() * sum + pose.translation;
}

double reg_oracle(const EdGraph& g) {
    double sum = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        for (const Neighbor& nb : g.neighbors[j]) {
            const EdNode& a = g.nodes[j];
            const EdNode& b = g.nodes[nb.index];
            for (int r = 0; r < 3; ++r) {
                double e = a.g(r) + a.t(r) - b.g(r) - b.t(r);
                for (int c = 0; c < 3; ++c) e += a.A(r, c) * (b.g(c) - a.g(c));
                sum += nb.alpha * e * e;
            }
        }
    }
    return sum;
}

void randomize_nodes(std::mt19937_64& rng, EdGraph& g) {
    for (EdNode& n : g.nodes) {
        n.A = Mat3::Identity() + 0.3 * Mat3::NullaryExpr([&](Eigen::Index, Eigen::Index) { return uniform(rng, -1, 1); });
        n.t = random_vector(rng, 10.0);
    }
}

}  // namespace

TEST_CASE("knn graph invariants") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 5 + trial % 10;
        const EdGraph g = make_knn_graph(random_points(rng, m), 3, 4);
        CHECK_NOTHROW(g.validate());
        for (std::size_t j = 0; j < g.size(); ++j) {
            CHECK(!g.neighbors[j].empty());
            for (const Neighbor& nb : g.neighbors[j]) {
                CHECK(nb.alpha > 0.0);
                CHECK(nb.index != j);
                const auto& back = g.neighbors[nb.index];
                CHECK(std::any_of(back.begin(), back.end(), [&](const Neighbor& x) { return x.index == j; }));
            }
        }
    }
}

TEST_CASE("graph validation rejects asymmetric adjacency") {
    std::mt19937_64 rng(22);
    EdGraph g = make_knn_graph(random_points(rng, 6), 2, 3);
    g.neighbors[0].push_back({g.size() - 1, 1.0});
    auto& last = g.neighbors.back();
    last.erase(std::remove_if(last.begin(), last.end(), [](const Neighbor& n) { return n.index == 0; }), last.end());
    CHECK_THROWS_AS(g.validate(), SchemaError);
}

TEST_CASE("compute_weights") {
    std::mt19937_64 rng(23);
    SUBCASE("a point on a node gives it the largest weight") {
        const EdGraph g = random_graph(rng, 8);
        const auto w = compute_weights(g.nodes[3].g, g);
        const auto best = std::max_element(w.begin(), w.end(), [](auto& a, auto& b) { return a.weight < b.weight; });
        CHECK(best->node == 3);
        for (const auto& x : w)
            if (x.node != 3) CHECK(x.weight < best->weight);
    }
    SUBCASE("the (k+1)-th node sets d_max; a k-th node at d_max gets weight 0") {
        EdGraph g;
        g.k_influence = 2;
        for (const Vec3& p : {Vec3(1, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 2), Vec3(5, 5, 5)}) g.nodes.push_back({p});
        g.neighbors.assign(4, {});
        const auto w = compute_weights(Vec3::Zero(), g);
        REQUIRE(w.size() == 2);
        CHECK(w[0].node == 0);
        CHECK(w[0].weight == doctest::Approx(1.0));
        CHECK(w[1].weight == 0.0);   // tie at distance 2 broken by index; raw weight 1 − 2/2
    }
    SUBCASE("brute-force oracle on random 10-node graphs") {
        for (int trial = 0; trial < 50; ++trial) {
            const EdGraph g = random_graph(rng, 10);
            const Vec3 v = random_vector(rng, 120.0);
            const auto w = compute_weights(v, g);
            const std::vector<double> ref = weight_oracle(v, g);
            double sum = 0.0;
            for (const auto& x : w) {
                CHECK(std::abs(x.weight - ref[x.node]) <= 1e-14);
                sum += x.weight;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
    SUBCASE("too few nodes") {
        EdGraph g = random_graph(rng, 3);
        g.k_influence = 3;
        CHECK_THROWS_AS(compute_weights(Vec3::Zero(), g), DegenerateGraphError);
    }
}

TEST_CASE("warp_point") {
    std::mt19937_64 rng(24);
    EdGraph g = random_graph(rng, 8);
    const Vec3 v = random_vector(rng, 80.0);
    CHECK((warp_point(v, g, {}) - v).norm() <= 1e-12);

    const Vec3 delta(1.5, -2.0, 0.25);
    for (EdNode& n : g.nodes) n.t = delta;
    CHECK((warp_point(v, g, {}) - (v + delta)).norm() <= 1e-12);

    for (int trial = 0; trial < 50; ++trial) {
        EdGraph r = random_graph(rng, 4 + trial % 8);
        randomize_nodes(rng, r);
        const GlobalPose pose{random_rotation(rng), random_vector(rng, 50.0)};
        const Vec3 p = random_vector(rng, 100.0);
        CHECK((warp_point(p, r, pose) - warp_oracle(p, r, pose)).norm() <= 1e-10);
    }
}

TEST_CASE("influence matrices") {
    std::mt19937_64 rng(25);
    SUBCASE("one point, four of five nodes active") {
        const EdGraph g = random_graph(rng, 5);
        REQUIRE(g.k_influence == 4);
        const InfluenceMatrices mats = build_influence_matrices(random_points(rng, 1), g);
        CHECK((mats.C.array() != 0.0).count() <= 4);
        CHECK((mats.C.array() != 0.0).count() >= 3);
        CHECK(std::abs(mats.C.sum() - 1.0) <= 1e-12);
    }
    for (int trial = 0; trial < 30; ++trial) {
        EdGraph g = random_graph(rng, 5 + trial % 15);
        randomize_nodes(rng, g);
        const Points pts = random_points(rng, 1 + trial);
        const InfluenceMatrices mats = build_influence_matrices(pts, g);
        for (Eigen::Index i = 0; i < pts.cols(); ++i) {
            CHECK(std::abs(mats.C.col(i).sum() - 1.0) <= 1e-12);
            CHECK((mats.C.col(i).array() != 0.0).count() <= g.k_influence);
        }
        const Points blended = mats.blended();
        for (Eigen::Index i = 0; i < pts.cols(); ++i) {
            CHECK((blended.col(i) - warp_oracle(pts.col(i), g, {})).norm() <= 1e-10);
        }

        // Permuting node storage leaves the blended warp unchanged.
        EdGraph perm = g;
        std::vector<std::size_t> order(g.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> where(g.size());
        for (std::size_t k = 0; k < order.size(); ++k) where[order[k]] = k;
        for (std::size_t k = 0; k < order.size(); ++k) {
            perm.nodes[k] = g.nodes[order[k]];
            perm.neighbors[k].clear();
            for (Neighbor nb : g.neighbors[order[k]]) perm.neighbors[k].push_back({where[nb.index], nb.alpha});
        }
        CHECK((build_influence_matrices(pts, perm).blended() - blended).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("energy terms") {
    std::mt19937_64 rng(26);
    SUBCASE("e_data") {
        for (int trial = 0; trial < 30; ++trial) {
            EdInstance inst = random_ed_instance(rng, 4 + trial % 10, 1 + trial);
            const DataTerm d = e_data(inst.problem.source, inst.state.graph, inst.state.pose, inst.problem.targets);
            double sum = 0.0;
            for (Eigen::Index i = 0; i < inst.problem.source.cols(); ++i) {
                const Vec3 r = warp_point(inst.problem.source.col(i), inst.state.graph, inst.state.pose) -
                               inst.problem.targets.col(i);
                CHECK((d.residual.col(i) - r).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, r.norm()) + 1e-11);
                sum += r.squaredNorm();
            }
            CHECK(d.energy == doctest::Approx(sum).epsilon(1e-12));
        }
        const EdInstance zero = random_consistent_ed_instance(rng, 6, 20);
        CHECK(e_data(zero.problem.source, zero.state.graph, zero.state.pose, zero.problem.targets).energy <= 1e-18);
    }
    SUBCASE("e_rot") {
        EdGraph g = random_graph(rng, 6);
        for (EdNode& n : g.nodes) n.A = random_rotation(rng).matrix();
        CHECK(e_rot(g) <= 1e-24);
        CHECK(rot_term(2.0 * Mat3::Identity()) == doctest::Approx(27.0));
        for (int trial = 0; trial < 20; ++trial) {
            randomize_nodes(rng, g);
            const Rotation v0 = random_rotation(rng);
            for (const EdNode& n : g.nodes) {
                CHECK(rot_term(v0.matrix().transpose() * n.A) == doctest::Approx(rot_term(n.A)).epsilon(1e-12));
            }
        }
    }
    SUBCASE("e_reg") {
        EdGraph g = random_graph(rng, 7);
        CHECK(e_reg(g) <= 1e-24);
        for (EdNode& n : g.nodes) n.t = Vec3(3, -1, 2);
        CHECK(e_reg(g) <= 1e-24);
        for (int trial = 0; trial < 20; ++trial) {
            EdGraph r = random_graph(rng, 4 + trial);
            randomize_nodes(rng, r);
            CHECK(e_reg(r) == doctest::Approx(reg_oracle(r)).epsilon(1e-12));
        }
    }
    SUBCASE("total energy composition") {
        EdInstance inst = random_ed_instance(rng, 8, 25);
        const auto& [src, tgt, w] = inst.problem;
        const EdGraph& g = inst.state.graph;
        const double data = e_data(src, g, inst.state.pose, tgt).energy;
        CHECK(total_energy(src, g, inst.state.pose, tgt, {0, 0, 1}) == doctest::Approx(data));
        CHECK(total_energy(src, g, inst.state.pose, tgt, {0.5, 2.0, 3.0}) ==
              doctest::Approx(0.5 * e_rot(g) + 2.0 * e_reg(g) + 3.0 * data).epsilon(1e-12));
        const EdInstance zero = random_consistent_ed_instance(rng, 6, 20);
        CHECK(total_energy(zero.problem.source, zero.state.graph, zero.state.pose, zero.problem.targets, {}) <= 1e-16);
    }
}

TEST_CASE("gauge maps preserve the energy") {
    std::mt19937_64 rng(27);
    for (int trial = 0; trial < 100; ++trial) {
        const EdInstance inst = random_ed_instance(rng, 3 + trial % 12, 5 + trial % 40);
        const auto energy = [&](const EdState& s) {
            return total_energy(inst.problem.source, s.graph, s.pose, inst.problem.targets, inst.problem.weights);
        };
        const double e0 = energy(inst.state);
        const Rotation v0 = random_rotation(rng);
        const Vec3 dt = random_vector(rng, 100.0);
        const EdState rotated = gauge_rotate(inst.state, v0);
        const EdState translated = gauge_translate(inst.state, dt);
        CHECK(std::abs(energy(rotated) - e0) <= 1e-10 * e0);
        CHECK(std::abs(energy(translated) - e0) <= 1e-10 * e0);
        CHECK(std::abs(e_rot(rotated.graph) - e_rot(inst.state.graph)) <= 1e-12 * std::max(1.0, e0));
        CHECK(std::abs(e_reg(translated.graph) - e_reg(inst.state.graph)) <= 1e-10 * std::max(1.0, e0));
    }

    const EdInstance inst = random_ed_instance(rng, 5, 10);
    const EdState same = gauge_rotate(gauge_translate(inst.state, Vec3::Zero()), Rotation());
    for (std::size_t j = 0; j < inst.state.graph.size(); ++j) {
        CHECK((same.graph.nodes[j].A - inst.state.graph.nodes[j].A).norm() == 0.0);
        CHECK((same.graph.nodes[j].t - inst.state.graph.nodes[j].t).norm() <= 1e-12);
    }

    const Rotation v0 = random_rotation(rng), w0 = random_rotation(rng);
    const EdState twice = gauge_rotate(gauge_rotate(inst.state, w0), v0);
    const EdState once = gauge_rotate(inst.state, w0 * v0);
    CHECK((twice.pose.rotation.matrix() - once.pose.rotation.matrix()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("full ED Jacobian matches finite differences") {
    std::mt19937_64 rng(28);
    for (int trial = 0; trial < 20; ++trial) {
        const EdInstance inst = random_ed_instance(rng, 3 + trial % 6, 4 + trial % 10);
        const Eigen::MatrixXd J = ed_jacobian(inst.problem, inst.state);
        const Eigen::MatrixXd N = numeric_jacobian(
            [&](const Eigen::VectorXd& d) { return ed_residuals(inst.problem, ed_retract(inst.state, d)); },
            ed_tangent_dim(inst.state.graph));
        CHECK(defslam::test::relative_error(J, N) <= 1e-6);
        const Eigen::VectorXd r = ed_residuals(inst.problem, inst.state);
        CHECK(r.squaredNorm() == doctest::Approx(total_energy(inst.problem.source, inst.state.graph, inst.state.pose,
                                                              inst.problem.targets, inst.problem.weights))
                                     .epsilon(1e-10));
    }
}
