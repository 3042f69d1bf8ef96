#include "defslam/observability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "defslam/errors.hpp"

namespace defslam {

Eigen::MatrixXd numeric_jacobian(const IncrementFn& residual, Eigen::Index dim, double step) {
    if (!(step > 0.0)) throw PreconditionError("finite-difference step must be positive");
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(dim);
    const Eigen::VectorXd r0 = residual(delta);
    if (!r0.allFinite()) throw NonFiniteError("residual is non-finite at the base state");
    Eigen::MatrixXd J(r0.size(), dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        delta(k) = step;
        const Eigen::VectorXd plus = residual(delta);
        delta(k) = -step;
        const Eigen::VectorXd minus = residual(delta);
        delta(k) = 0.0;
        if (!plus.allFinite() || !minus.allFinite()) {
            throw NonFiniteError("residual is non-finite while probing coordinate " + std::to_string(k));
        }
        J.col(k) = (plus - minus) / (2.0 * step);
    }
    return J;
}

Eigen::MatrixXd fim(const Eigen::MatrixXd& jacobian) {
    Eigen::MatrixXd F = jacobian.transpose() * jacobian;
    // Symmetrize away rounding asymmetry of the product.
    return 0.5 * (F + F.transpose());
}

FimReport rank_analysis(const Eigen::MatrixXd& fim, double rel_tol) {
    if (fim.rows() != fim.cols()) throw DimensionMismatchError("rank analysis needs a square matrix");
    const Eigen::Index n = fim.rows();
    FimReport report;
    report.tolerance_used = rel_tol;
    if (n == 0) return report;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fim);
    const Eigen::VectorXd abs_values = eig.eigenvalues().cwiseAbs();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return abs_values(a) > abs_values(b); });

    report.singular_values.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) report.singular_values(k) = abs_values(order[static_cast<std::size_t>(k)]);
    const double smax = report.singular_values(0);
    const double threshold = rel_tol * smax;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (smax > 0.0 && report.singular_values(k) > threshold) ++report.rank;
    }
    report.nullity = static_cast<int>(n) - report.rank;
    report.null_basis.resize(n, report.nullity);
    for (int k = 0; k < report.nullity; ++k) {
        report.null_basis.col(k) = eig.eigenvectors().col(order[static_cast<std::size_t>(report.rank + k)]);
    }
    return report;
}

FimReport scaled_rank_analysis(const Eigen::MatrixXd& fim, double rel_tol) {
    if (fim.rows() != fim.cols()) throw DimensionMismatchError("rank analysis needs a square matrix");
    Eigen::VectorXd s = fim.diagonal();
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = s(i) > 0.0 ? 1.0 / std::sqrt(s(i)) : 1.0;
    FimReport report = rank_analysis(s.asDiagonal() * fim * s.asDiagonal(), rel_tol);
    if (report.nullity > 0) {
        const Eigen::MatrixXd mapped = s.asDiagonal() * report.null_basis;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(mapped);
        report.null_basis = qr.householderQ() * Eigen::MatrixXd::Identity(mapped.rows(), mapped.cols());
    }
    return report;
}

double null_share(const FimReport& report, Eigen::Index offset, Eigen::Index count) {
    if (report.nullity == 0 || count == 0) return 0.0;
    const double total = report.null_basis.squaredNorm();
    return report.null_basis.middleRows(offset, count).squaredNorm() / total;
}

// ---------------------------------------------------------------------------

namespace {

struct PointBlend {
    std::vector<NodeWeight> weights;
    Vec3 blended = Vec3::Zero();
};

PointBlend blend(const EdPointInstance& in) {
    PointBlend out;
    out.weights = compute_weights(in.point, in.graph);
    for (const NodeWeight& nw : out.weights) {
        const EdNode& node = in.graph.nodes[nw.node];
        out.blended += nw.weight * (node.A * (in.point - node.g) + node.g + node.t);
    }
    return out;
}

}  // namespace

Vec3 ed_point_residual(const EdPointInstance& instance) {
    return instance.pose.rotation * blend(instance).blended + instance.pose.translation - instance.target;
}

EdPointInstance ed_point_retract(const EdPointInstance& instance, const Eigen::VectorXd& delta) {
    if (delta.size() != instance.tangent_dim()) {
        throw DimensionMismatchError("single-point ED increment has wrong size");
    }
    const auto m = static_cast<Eigen::Index>(instance.graph.size());
    EdPointInstance out = instance;
    for (Eigen::Index j = 0; j < m; ++j) {
        EdNode& node = out.graph.nodes[static_cast<std::size_t>(j)];
        // Columns 3j..3j+2 of Λ are the columns of A_j; column j of T is t_j + g_j.
        node.A += Eigen::Map<const Mat3>(delta.data() + 9 * j);
        node.t += delta.segment<3>(9 * m + 3 * j);
    }
    out.pose.rotation = instance.pose.rotation * exp_rotation(delta.segment<3>(12 * m));
    out.pose.translation += delta.segment<3>(12 * m + 3);
    return out;
}

Eigen::MatrixXd assemble_ed_jacobian(const EdPointInstance& instance) {
    const auto m = static_cast<Eigen::Index>(instance.graph.size());
    const Mat3& Rc = instance.pose.rotation.matrix();
    const PointBlend b = blend(instance);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, instance.tangent_dim());
    for (const NodeWeight& nw : b.weights) {
        const auto j = static_cast<Eigen::Index>(nw.node);
        const Vec3 mv = nw.weight * (instance.point - instance.graph.nodes[nw.node].g);
        for (int c = 0; c < 3; ++c) J.block<3, 3>(0, 9 * j + 3 * c) = mv(c) * Rc;
        J.block<3, 3>(0, 9 * m + 3 * j) = nw.weight * Rc;
    }
    J.block<3, 3>(0, 12 * m) = -Rc * skew(b.blended);
    J.block<3, 3>(0, 12 * m + 3) = Mat3::Identity();
    return J;
}

HessianLawReport check_hessian_law(const EdPointInstance& instance) {
    const auto m = static_cast<Eigen::Index>(instance.graph.size());
    const Eigen::MatrixXd J = assemble_ed_jacobian(instance);
    const Eigen::MatrixXd H = J.transpose() * J;
    const Mat3& Rc = instance.pose.rotation.matrix();

    const Eigen::MatrixXd H3 = H.middleRows(12 * m, 3);
    const Eigen::MatrixXd H4 = H.middleRows(12 * m + 3, 3);

    // M and C for the single point, in Λ-column and node order.
    Eigen::VectorXd Mv = Eigen::VectorXd::Zero(3 * m);
    Eigen::VectorXd Cv = Eigen::VectorXd::Zero(m);
    Vec3 blended = Vec3::Zero();
    for (const NodeWeight& nw : compute_weights(instance.point, instance.graph)) {
        const EdNode& node = instance.graph.nodes[nw.node];
        const auto j = static_cast<Eigen::Index>(nw.node);
        Mv.segment<3>(3 * j) = nw.weight * (instance.point - node.g);
        Cv(j) = nw.weight;
        blended += nw.weight * (node.A * (instance.point - node.g) + node.g + node.t);
    }
    const Mat3 S = skew(blended);
    const Mat3 St_pinv = S.transpose().completeOrthogonalDecomposition().pseudoInverse();
    const Mat3 P = St_pinv * S.transpose();

    HessianLawReport report;
    report.tolerance = 1e-10 * std::max(1.0, H.cwiseAbs().maxCoeff());

    const Eigen::MatrixXd RtH4 = Rc.transpose() * H4;
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::MatrixXd diff = H.middleRows(9 * m + 3 * j, 3) - Cv(j) * RtH4;
        report.h2_error = std::max(report.h2_error, diff.cwiseAbs().maxCoeff());
    }
    const Eigen::MatrixXd recovered = -St_pinv * H3;
    for (Eigen::Index c = 0; c < 3 * m; ++c) {
        const Eigen::MatrixXd diff = P * H.middleRows(3 * c, 3) - Mv(c) * recovered;
        report.h1_error = std::max(report.h1_error, diff.cwiseAbs().maxCoeff());
    }

    const FimReport rank = rank_analysis(H);
    report.hessian_rank = rank.rank;
    report.hessian_nullity = rank.nullity;
    return report;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd ed_fim(const EdProblem& problem, const EdState& state) {
    return fim(ed_jacobian(problem, state));
}

Eigen::VectorXd ed_local_difference(const EdState& a, const EdState& b) {
    if (a.graph.size() != b.graph.size()) throw DimensionMismatchError("ED states differ in node count");
    const auto m = static_cast<Eigen::Index>(a.graph.size());
    Eigen::VectorXd d(ed_tangent_dim(a.graph));
    for (Eigen::Index j = 0; j < m; ++j) {
        const EdNode& na = a.graph.nodes[static_cast<std::size_t>(j)];
        const EdNode& nb = b.graph.nodes[static_cast<std::size_t>(j)];
        Eigen::Map<Mat3>(d.data() + 12 * j) = nb.A - na.A;
        d.segment<3>(12 * j + 9) = nb.t - na.t;
    }
    d.segment<3>(12 * m) = inverse_retraction(b.pose.rotation, a.pose.rotation);
    d.segment<3>(12 * m + 3) = b.pose.translation - a.pose.translation;
    return d;
}

Eigen::MatrixXd gauge_tangent_directions(const EdState& state, double eps) {
    Eigen::MatrixXd dirs(ed_tangent_dim(state.graph), 6);
    for (int i = 0; i < 3; ++i) {
        const Vec3 e = Vec3::Unit(i);
        const EdState plus = gauge_rotate(state, exp_rotation(eps * e));
        const EdState minus = gauge_rotate(state, exp_rotation(-eps * e));
        dirs.col(i) = (ed_local_difference(state, plus) - ed_local_difference(state, minus)) / (2.0 * eps);
    }
    for (int i = 0; i < 3; ++i) {
        const Vec3 e = Vec3::Unit(i);
        const EdState plus = gauge_translate(state, eps * e);
        const EdState minus = gauge_translate(state, -eps * e);
        dirs.col(3 + i) = (ed_local_difference(state, plus) - ed_local_difference(state, minus)) / (2.0 * eps);
    }
    return dirs;
}

bool GaugeReport::passed() const {
    return std::all_of(ratios.begin(), ratios.end(), [this](double r) { return r <= tolerance; });
}

GaugeReport gauge_null_ratios(const EdProblem& problem, const EdState& state, double tolerance) {
    GaugeReport report;
    report.tolerance = tolerance;
    const Eigen::MatrixXd J = ed_jacobian(problem, state);
    report.max_residual = ed_residuals(problem, state).cwiseAbs().maxCoeff();
    report.directions = gauge_tangent_directions(state);
    const double jnorm = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues()(0);
    for (int k = 0; k < 6; ++k) {
        const Eigen::VectorXd v = report.directions.col(k);
        const double denom = jnorm * v.norm();
        report.ratios[static_cast<std::size_t>(k)] = denom > 0.0 ? (J * v).norm() / denom : 0.0;
    }
    return report;
}

GaugeReport verify_gauge_null_directions(const EdProblem& problem, const EdState& state, double tolerance) {
    const double worst = ed_residuals(problem, state).cwiseAbs().maxCoeff();
    if (worst > 1e-10) {
        throw PreconditionError("state is not at zero residual (max |r| = " + std::to_string(worst) + ")");
    }
    return gauge_null_ratios(problem, state, tolerance);
}

// ---------------------------------------------------------------------------

void ToyInstance::validate() const {
    if (features.size() != observations.size()) {
        throw DimensionMismatchError("toy instance needs one observation triple per feature");
    }
    if (features.empty()) throw DimensionMismatchError("toy instance needs at least one feature");
    auto finite = [](const std::array<Vec3, 3>& a) {
        return std::all_of(a.begin(), a.end(), [](const Vec3& v) { return v.allFinite(); });
    };
    bool ok = finite(positions) && delta.allFinite() &&
              std::all_of(features.begin(), features.end(), finite) &&
              std::all_of(observations.begin(), observations.end(), finite);
    if (!ok) throw NonFiniteError("toy instance has non-finite entries");
}

namespace {

Eigen::Index toy_feature_col(Eigen::Index feature, int step) { return 18 + 9 * feature + 3 * step; }

}  // namespace

Eigen::VectorXd toy_objective(const ToyInstance& instance) {
    instance.validate();
    const int n = instance.feature_count();
    Eigen::VectorXd r(12 * n + 12);
    Eigen::Index row = 0;
    for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < n; ++i) {
            r.segment<3>(row) = observe_model(instance.rotations[j], instance.positions[j],
                                              instance.features[i][j]) - instance.observations[i][j];
            row += 3;
        }
    }
    for (int i = 0; i < n; ++i) {
        const auto& f = instance.features[i];
        r.segment<3>(row) = f[2] - instance.delta(0) * f[1] - instance.delta(1) * f[0];
        row += 3;
    }
    for (int j = 0; j < 2; ++j) {
        r.segment<3>(row) = log_rotation(instance.rotations[j]);
        row += 3;
    }
    for (int j = 0; j < 2; ++j) {
        r.segment<3>(row) = instance.positions[j];
        row += 3;
    }
    return r;
}

Eigen::MatrixXd toy_jacobian(const ToyInstance& instance) {
    instance.validate();
    const int n = instance.feature_count();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(12 * n + 12, instance.tangent_dim());
    const Eigen::Index dcol = toy_delta_offset(instance);
    Eigen::Index row = 0;
    for (int j = 0; j < 3; ++j) {
        const Mat3& R = instance.rotations[j].matrix();
        for (int i = 0; i < n; ++i) {
            const Vec3 d = instance.features[i][j] - instance.positions[j];
            J.block<3, 3>(row, 6 * j) = -R * skew(d);
            J.block<3, 3>(row, 6 * j + 3) = -R;
            J.block<3, 3>(row, toy_feature_col(i, j)) = R;
            row += 3;
        }
    }
    for (int i = 0; i < n; ++i) {
        const auto& f = instance.features[i];
        J.block<3, 3>(row, toy_feature_col(i, 2)) = Mat3::Identity();
        J.block<3, 3>(row, toy_feature_col(i, 1)) = -instance.delta(0) * Mat3::Identity();
        J.block<3, 3>(row, toy_feature_col(i, 0)) = -instance.delta(1) * Mat3::Identity();
        J.block<3, 1>(row, dcol) = -f[1];
        J.block<3, 1>(row, dcol + 1) = -f[0];
        row += 3;
    }
    for (int j = 0; j < 2; ++j) {
        J.block<3, 3>(row, 6 * j) = right_jacobian_inverse(log_rotation(instance.rotations[j]));
        row += 3;
    }
    for (int j = 0; j < 2; ++j) {
        J.block<3, 3>(row, 6 * j + 3) = Mat3::Identity();
        row += 3;
    }
    return J;
}

ToyInstance toy_retract(const ToyInstance& instance, const Eigen::VectorXd& delta) {
    if (delta.size() != instance.tangent_dim()) throw DimensionMismatchError("toy increment has wrong size");
    ToyInstance out = instance;
    for (int j = 0; j < 3; ++j) {
        out.rotations[j] = instance.rotations[j] * exp_rotation(delta.segment<3>(6 * j));
        out.positions[j] += delta.segment<3>(6 * j + 3);
    }
    for (int i = 0; i < instance.feature_count(); ++i) {
        for (int j = 0; j < 3; ++j) out.features[i][j] += delta.segment<3>(toy_feature_col(i, j));
    }
    out.delta += delta.tail<2>();
    return out;
}

FimReport toy_fim(const ToyInstance& instance, double rel_tol) {
    return scaled_rank_analysis(fim(toy_jacobian(instance)), rel_tol);
}

// ---------------------------------------------------------------------------

TimeSeriesFim timeseries_fim(const ObservationSet& obs, const TrajectoryState& state,
                             const SolverConfig& config, double rel_tol) {
    TimeSeriesProblem problem(obs, config, FeatureModel::TimeSeries);
    problem.set_include_regularizer(false);
    const Eigen::MatrixXd J(problem.jacobian(state));
    TimeSeriesFim out;
    out.report = scaled_rank_analysis(fim(J), rel_tol);
    out.coefficient_offset = problem.coefficient_offset();
    out.coefficient_count = problem.coefficients_free() ? config.window : 0;
    out.coefficient_share = null_share(out.report, out.coefficient_offset, out.coefficient_count);
    return out;
}

}  // namespace defslam
