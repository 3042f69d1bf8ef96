#include "doctest.h"

#include <random>

#include <Eigen/SVD>

#include "defslam/errors.hpp"
#include "defslam/fixtures.hpp"
#include "defslam/observability.hpp"
#include "helpers.hpp"

using namespace defslam;
using defslam::test::relative_error;
using defslam::test::uniform;

TEST_CASE("numeric_jacobian") {
    std::mt19937_64 rng(31);
    const Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(4, 3, [&](Eigen::Index, Eigen::Index) { return uniform(rng, -2, 2); });
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(4);
    const Eigen::MatrixXd J = numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return A * x - b; }, 3);
    CHECK((J - A).cwiseAbs().maxCoeff() <= 1e-10);

    const Eigen::MatrixXd Z = numeric_jacobian([](const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(2, 5.0); }, 3);
    CHECK(Z.isZero(0.0));

    const Eigen::MatrixXd D = numeric_jacobian(
        [](const Eigen::VectorXd& d) { return Eigen::VectorXd::Constant(1, (3.0 + d(0)) * (3.0 + d(0))); }, 1);
    CHECK(std::abs(D(0, 0) - 6.0) <= 1e-6);
}

TEST_CASE("fim and rank analysis") {
    CHECK(fim(Eigen::MatrixXd::Identity(4, 4)).isIdentity(0.0));

    std::mt19937_64 rng(32);
    Eigen::MatrixXd J = Eigen::MatrixXd::NullaryExpr(8, 5, [&](Eigen::Index, Eigen::Index) { return uniform(rng, -1, 1); });
    J.col(2).setZero();
    const Eigen::MatrixXd F = fim(J);
    CHECK(F.row(2).isZero(0.0));
    CHECK(F.col(2).isZero(0.0));
    CHECK((F - F.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

    const FimReport id = rank_analysis(Eigen::MatrixXd::Identity(5, 5));
    CHECK(id.rank == 5);
    CHECK(id.nullity == 0);

    const FimReport diag = rank_analysis(Eigen::Vector3d(1, 1, 0).asDiagonal().toDenseMatrix());
    CHECK(diag.rank == 2);
    CHECK(diag.nullity == 1);
    CHECK(std::abs(std::abs(diag.null_basis(2, 0)) - 1.0) <= 1e-12);

    for (int trial = 0; trial < 20; ++trial) {
        const int n = 6 + trial % 5, r = 2 + trial % 4;
        const Eigen::MatrixXd L = Eigen::MatrixXd::NullaryExpr(n, r, [&](Eigen::Index, Eigen::Index) { return uniform(rng, -1, 1); });
        const Eigen::MatrixXd Fr = L * L.transpose();
        const FimReport rep = rank_analysis(Fr);
        CHECK(rep.rank == r);
        CHECK(rep.rank + rep.nullity == n);
        for (Eigen::Index i = 0; i + 1 < rep.singular_values.size(); ++i) {
            CHECK(rep.singular_values(i) >= rep.singular_values(i + 1));
        }
        CHECK(rep.singular_values.minCoeff() >= 0.0);
        CHECK((Fr * rep.null_basis).norm() <= rep.tolerance_used * rep.singular_values(0) * rep.nullity + 1e-12);
        CHECK((rep.null_basis.transpose() * rep.null_basis - Eigen::MatrixXd::Identity(rep.nullity, rep.nullity))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-10);
        // Scale equivariance.
        CHECK(rank_analysis(1e6 * Fr).rank == r);
        CHECK(rank_analysis(1e-6 * Fr).rank == r);
        CHECK(scaled_rank_analysis(Fr).rank == r);
    }
}

TEST_CASE("single-point ED Jacobian") {
    std::mt19937_64 rng(33);
    SUBCASE("identity configuration: Tc block is I, rotation block is −Rc·skew(warp)") {
        EdPointInstance inst;
        inst.graph = random_graph(rng, 6);
        inst.point = random_vector(rng, 40.0);
        const Eigen::MatrixXd J = assemble_ed_jacobian(inst);
        const Eigen::Index m = static_cast<Eigen::Index>(inst.graph.size());
        CHECK((J.block(0, 12 * m + 3, 3, 3) - Eigen::Matrix3d::Identity()).norm() == 0.0);
        const Vec3 blended = warp_point(inst.point, inst.graph, {});
        CHECK((J.block(0, 12 * m, 3, 3) + skew(blended)).cwiseAbs().maxCoeff() <= 1e-10);
    }
    for (int trial = 0; trial < 50; ++trial) {
        const EdPointInstance inst = random_ed_point_instance(rng, 5 + trial % 6);
        const Eigen::MatrixXd J = assemble_ed_jacobian(inst);
        const Eigen::MatrixXd N = numeric_jacobian(
            [&](const Eigen::VectorXd& d) -> Eigen::VectorXd { return ed_point_residual(ed_point_retract(inst, d)); },
            inst.tangent_dim());
        CHECK(relative_error(J, N) <= 1e-6);
        const Vec3 blended = inst.pose.rotation.inverse() * (warp_point(inst.point, inst.graph, inst.pose) - inst.pose.translation);
        const Eigen::Index m = static_cast<Eigen::Index>(inst.graph.size());
        CHECK((J.block(0, 12 * m, 3, 3) + inst.pose.rotation.matrix() * skew(blended)).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("Hessian law") {
    std::mt19937_64 rng(34);
    SUBCASE("identity rotation") {
        EdPointInstance inst = random_ed_point_instance(rng, 6);
        inst.pose.rotation = Rotation();
        CHECK(check_hessian_law(inst).passed());
    }
    for (int trial = 0; trial < 20; ++trial) {
        const HessianLawReport r = check_hessian_law(random_ed_point_instance(rng, 5 + trial % 5));
        CHECK(r.h2_holds());
        CHECK(r.h1_holds());
        CHECK(r.rank_deficient());
    }
}

TEST_CASE("ED gauge directions") {
    std::mt19937_64 rng(35);
    SUBCASE("consistent states: nullity at least six, gauge directions in the kernel") {
        for (int trial = 0; trial < 10; ++trial) {
            const EdInstance inst = random_consistent_ed_instance(rng, 4 + trial % 7, 10 + trial * 2);
            const FimReport rep = rank_analysis(ed_fim(inst.problem, inst.state));
            CHECK(rep.nullity >= 6);
            const GaugeReport g = verify_gauge_null_directions(inst.problem, inst.state);
            CHECK(g.passed());
        }
    }
    SUBCASE("translation directions vanish at any state; a random direction does not") {
        for (int trial = 0; trial < 10; ++trial) {
            const EdInstance inst = random_ed_instance(rng, 5 + trial % 5, 15);
            const GaugeReport g = gauge_null_ratios(inst.problem, inst.state);
            for (int k = 3; k < 6; ++k) CHECK(g.ratios[static_cast<std::size_t>(k)] <= 1e-8);
            CHECK_THROWS_AS(verify_gauge_null_directions(inst.problem, inst.state), PreconditionError);

            const Eigen::MatrixXd J = ed_jacobian(inst.problem, inst.state);
            Eigen::VectorXd v(J.cols());
            for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = uniform(rng, -1, 1);
            const double norm2 = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues()(0);
            CHECK((J * v).norm() > 1e-3 * norm2 * v.norm());
        }
    }
}

TEST_CASE("toy model") {
    std::mt19937_64 rng(36);
    SUBCASE("noiseless instance has zero residual; static prior row vanishes") {
        const ToyInstance moving = random_toy_instance(rng, true);
        CHECK(toy_objective(moving).norm() <= 1e-10);
        const ToyInstance fixed = random_toy_instance(rng, false);
        CHECK(toy_objective(fixed).norm() <= 1e-10);
    }
    SUBCASE("transcription oracle") {
        ToyInstance t = random_toy_instance(rng, true, 2);
        for (auto& f : t.features)
            for (Vec3& p : f) p += random_vector(rng, 2.0);
        t.delta += Eigen::Vector2d(0.1, -0.05);
        const Eigen::VectorXd r = toy_objective(t);
        Eigen::Index row = 0;
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t i = 0; i < t.features.size(); ++i) {
                const Vec3 ref = t.rotations[j] * (t.features[i][j] - t.positions[j]) - t.observations[i][j];
                CHECK((r.segment<3>(row) - ref).norm() <= 1e-12);
                row += 3;
            }
        for (const auto& f : t.features) {
            const Vec3 ref = f[2] - t.delta(0) * f[1] - t.delta(1) * f[0];
            CHECK((r.segment<3>(row) - ref).norm() <= 1e-12);
            row += 3;
        }
        CHECK(row + 12 == r.size());
    }
    SUBCASE("Jacobian") {
        for (int trial = 0; trial < 20; ++trial) {
            ToyInstance t = random_toy_instance(rng, trial % 2 == 0, 1 + trial % 4);
            t.rotations[1] = random_rotation(rng);
            t.positions[0] = random_vector(rng, 5.0);
            const Eigen::MatrixXd N = numeric_jacobian(
                [&](const Eigen::VectorXd& d) { return toy_objective(toy_retract(t, d)); }, t.tangent_dim());
            CHECK(relative_error(toy_jacobian(t), N) <= 1e-6);
        }
    }
    SUBCASE("rank: moving features full rank, static features lose exactly one") {
        for (int trial = 0; trial < 20; ++trial) {
            const ToyInstance moving = random_toy_instance(rng, true);
            CHECK(toy_fim(moving).nullity == 0);
            const ToyInstance fixed = random_toy_instance(rng, false);
            const FimReport rep = toy_fim(fixed);
            CHECK(rep.nullity == 1);
            CHECK(null_share(rep, toy_delta_offset(fixed), 2) >= 0.5);
        }
    }
}

TEST_CASE("toy fixture validation") {
    ToyInstance t;
    t.features.resize(2);
    t.observations.resize(1);
    CHECK_THROWS_AS(t.validate(), DimensionMismatchError);
}
