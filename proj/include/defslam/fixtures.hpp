#pragma once

// Seeded random instances shared by the CLI fixture generator and the tests.

#include <random>

#include "defslam/ed_graph.hpp"
#include "defslam/observability.hpp"

namespace defslam {

struct EdInstance {
    EdProblem problem;
    EdState state;
};

Rotation random_rotation(std::mt19937_64& rng);
Vec3 random_vector(std::mt19937_64& rng, double scale);

/// Random node layout with a knn topology (graph_k = min(3, m − 1),
/// k_influence = min(4, m − 1)). Requires m >= 2.
EdGraph random_graph(std::mt19937_64& rng, int m, double extent = 100.0);

/// Every node carries the same rigid motion, so every residual vanishes:
/// targets are the warped source points.
EdInstance random_consistent_ed_instance(std::mt19937_64& rng, int m, int n);

/// Perturbed affine nodes, random pose and targets off the warp: a generic,
/// non-zero-residual state.
EdInstance random_ed_instance(std::mt19937_64& rng, int m, int n);

EdPointInstance random_ed_point_instance(std::mt19937_64& rng, int m);

/// Noiseless toy instance with the first two poses at the anchor. Moving
/// features satisfy the prior with δ₁ + δ₂ ≠ 1; static ones have f¹ = f² = f³
/// and δ₁ + δ₂ = 1.
ToyInstance random_toy_instance(std::mt19937_64& rng, bool moving, int features = 4);

}  // namespace defslam
