#include "defslam/fixtures.hpp"

#include <algorithm>

#include "defslam/errors.hpp"

namespace defslam {

Rotation random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 axis(n(rng), n(rng), n(rng));
    axis.normalize();
    const double angle = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    return exp_rotation(angle * axis);
}

Vec3 random_vector(std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    const double x = u(rng), y = u(rng), z = u(rng);
    return Vec3(x, y, z);
}

EdGraph random_graph(std::mt19937_64& rng, int m, double extent) {
    if (m < 2) throw PreconditionError("a random graph needs at least two nodes");
    Points g(3, m);
    for (int j = 0; j < m; ++j) g.col(j) = random_vector(rng, 0.5 * extent);
    return make_knn_graph(g, static_cast<std::size_t>(std::min(3, m - 1)), std::min(4, m - 1));
}

namespace {

Points random_points(std::mt19937_64& rng, int n, double extent) {
    Points p(3, n);
    for (int i = 0; i < n; ++i) p.col(i) = random_vector(rng, 0.5 * extent);
    return p;
}

Points warp_all(const Points& source, const EdState& state) {
    Points out(3, source.cols());
    for (Eigen::Index i = 0; i < source.cols(); ++i) out.col(i) = warp_point(source.col(i), state.graph, state.pose);
    return out;
}

}  // namespace

EdInstance random_consistent_ed_instance(std::mt19937_64& rng, int m, int n) {
    EdInstance out;
    out.state.graph = random_graph(rng, m);
    const Rotation q = random_rotation(rng);
    const Vec3 b = random_vector(rng, 20.0);
    for (EdNode& node : out.state.graph.nodes) {
        node.A = q.matrix();
        node.t = q * node.g + b - node.g;
    }
    out.state.pose.rotation = random_rotation(rng);
    out.state.pose.translation = random_vector(rng, 50.0);
    out.problem.source = random_points(rng, n, 100.0);
    out.problem.targets = warp_all(out.problem.source, out.state);
    out.problem.weights = {1.0, 1.0, 1.0};
    return out;
}

EdInstance random_ed_instance(std::mt19937_64& rng, int m, int n) {
    EdInstance out;
    out.state.graph = random_graph(rng, m);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (EdNode& node : out.state.graph.nodes) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) node.A(r, c) += 0.2 * noise(rng);
        node.t = random_vector(rng, 5.0);
    }
    out.state.pose.rotation = random_rotation(rng);
    out.state.pose.translation = random_vector(rng, 50.0);
    out.problem.source = random_points(rng, n, 100.0);
    out.problem.targets = warp_all(out.problem.source, out.state);
    for (Eigen::Index i = 0; i < out.problem.targets.cols(); ++i) out.problem.targets.col(i) += random_vector(rng, 3.0);
    std::uniform_real_distribution<double> w(0.5, 2.0);
    const double rot = w(rng), reg = w(rng), data = w(rng);
    out.problem.weights = {rot, reg, data};
    return out;
}

EdPointInstance random_ed_point_instance(std::mt19937_64& rng, int m) {
    EdPointInstance out;
    out.graph = random_graph(rng, m);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (EdNode& node : out.graph.nodes) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) node.A(r, c) += 0.2 * noise(rng);
        node.t = random_vector(rng, 5.0);
    }
    out.point = random_vector(rng, 50.0);
    out.pose.rotation = random_rotation(rng);
    out.pose.translation = random_vector(rng, 50.0);
    out.target = random_vector(rng, 80.0);
    return out;
}

ToyInstance random_toy_instance(std::mt19937_64& rng, bool moving, int features) {
    ToyInstance toy;
    toy.rotations[2] = exp_rotation(random_vector(rng, 0.5));
    toy.positions[2] = random_vector(rng, 30.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    if (moving) {
        // Keep δ₁ + δ₂ away from 1 so f³ leaves the line through f¹, f².
        double d1, d2;
        do {
            d1 = 1.0 + u(rng);
            d2 = u(rng);
        } while (std::abs(d1 + d2 - 1.0) < 0.2);
        toy.delta = Eigen::Vector2d(d1, d2);
    } else {
        const double d1 = 0.5 + 0.5 * u(rng);
        toy.delta = Eigen::Vector2d(d1, 1.0 - d1);
    }
    for (int i = 0; i < features; ++i) {
        std::array<Vec3, 3> f;
        const Vec3 base = Vec3(200.0, 0.0, 0.0) + random_vector(rng, 100.0);
        if (moving) {
            f[0] = base;
            f[1] = base + random_vector(rng, 20.0);
            f[2] = toy.delta(0) * f[1] + toy.delta(1) * f[0];
        } else {
            f = {base, base, base};
        }
        std::array<Vec3, 3> z;
        for (int j = 0; j < 3; ++j) z[j] = observe_model(toy.rotations[j], toy.positions[j], f[j]);
        toy.features.push_back(f);
        toy.observations.push_back(z);
    }
    return toy;
}

}  // namespace defslam
