#include "defslam/ts_slam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "defslam/errors.hpp"

namespace defslam {

ShapeMatrix::ShapeMatrix(int features, int steps)
    : features_(features),
      steps_(steps),
      b_(Eigen::MatrixXd::Zero(3 * features, steps)),
      valid_(static_cast<std::size_t>(features) * static_cast<std::size_t>(steps), 0) {}

bool ShapeMatrix::window_valid(int feature, int last, int window) const {
    if (last - window < 0 || last >= steps_) return false;
    for (int s = last - window; s <= last; ++s) {
        if (!valid(feature, s)) return false;
    }
    return true;
}

ObservationSet::ObservationSet(int features, int steps)
    : features_(features),
      steps_(steps),
      z_(static_cast<std::size_t>(features) * static_cast<std::size_t>(steps)) {}

std::size_t ObservationSet::count() const {
    return static_cast<std::size_t>(
        std::count_if(z_.begin(), z_.end(), [](const auto& z) { return z.has_value(); }));
}

void SolverConfig::validate() const {
    if (window < 1) throw SchemaError("window must be >= 1");
    if (max_iterations < 1) throw SchemaError("max_iterations must be >= 1");
    if (!(initial_damping > 0.0) || !(damping_up > 1.0) || !(damping_down > 0.0 && damping_down < 1.0)) {
        throw SchemaError("damping schedule must satisfy initial > 0, up > 1, 0 < down < 1");
    }
    if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0) || !(function_tolerance >= 0.0)) {
        throw SchemaError("tolerances must be positive");
    }
    if (!(coeff_regularization >= 0.0) || !(w_obs > 0.0) || !(w_f >= 0.0) || !(w_ini >= 0.0)) {
        throw SchemaError("energy weights must be non-negative (w_obs > 0)");
    }
}

LmOptions SolverConfig::lm_options() const {
    LmOptions o;
    o.max_iterations = max_iterations;
    o.initial_damping = initial_damping;
    o.damping_up = damping_up;
    o.damping_down = damping_down;
    o.gradient_tolerance = gradient_tolerance;
    o.step_tolerance = step_tolerance;
    o.function_tolerance = function_tolerance;
    return o;
}

Vec3 observe_model(const Rotation& r, const Vec3& p, const Vec3& f) { return r * (f - p); }

Vec3 predict_feature(std::span<const Vec3> history, const Eigen::VectorXd& coeffs) {
    if (static_cast<Eigen::Index>(history.size()) != coeffs.size()) {
        throw DimensionMismatchError("history length " + std::to_string(history.size()) +
                                     " does not match window " + std::to_string(coeffs.size()));
    }
    Vec3 out = Vec3::Zero();
    for (std::size_t k = 0; k < history.size(); ++k) out += coeffs(static_cast<Eigen::Index>(k)) * history[k];
    return out;
}

Eigen::VectorXd static_prior_coefficients(int window) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(window);
    if (window > 0) c(0) = 1.0;
    return c;
}

namespace {

Vec3 window_residual(const TrajectoryState& state, int feature, int last) {
    const auto t = static_cast<int>(state.coeffs.size());
    Vec3 r = state.shapes.at(feature, last);
    for (int k = 1; k <= t; ++k) r -= state.coeffs(k - 1) * state.shapes.at(feature, last - k);
    return r;
}

int anchor_count(int steps, int window) { return std::min(steps, window); }

}  // namespace

TermValue e_obs(const TrajectoryState& state, const ObservationSet& obs) {
    std::vector<double> res;
    for (int j = 0; j < obs.steps(); ++j) {
        for (int i = 0; i < obs.features(); ++i) {
            const auto& z = obs.at(i, j);
            if (!z) continue;
            const Vec3 r = observe_model(state.rotations[j], state.positions[j], state.shapes.at(i, j)) - *z;
            res.insert(res.end(), {r.x(), r.y(), r.z()});
        }
    }
    TermValue out;
    out.residuals = Eigen::Map<Eigen::VectorXd>(res.data(), static_cast<Eigen::Index>(res.size()));
    out.energy = out.residuals.squaredNorm();
    return out;
}

TermValue e_f(const TrajectoryState& state) {
    const auto t = static_cast<int>(state.coeffs.size());
    std::vector<double> res;
    for (int i = 0; i < state.features(); ++i) {
        for (int last = t; last < state.steps(); ++last) {
            if (!state.shapes.window_valid(i, last, t)) continue;
            const Vec3 r = window_residual(state, i, last);
            res.insert(res.end(), {r.x(), r.y(), r.z()});
        }
    }
    TermValue out;
    out.residuals = Eigen::Map<Eigen::VectorXd>(res.data(), static_cast<Eigen::Index>(res.size()));
    out.energy = out.residuals.squaredNorm();
    return out;
}

TermValue e_ini(const TrajectoryState& state, const SolverConfig& config) {
    const int n = anchor_count(state.steps(), config.window);
    TermValue out;
    out.residuals.resize(6 * n);
    for (int i = 0; i < n; ++i) {
        out.residuals.segment<3>(6 * i) = state.positions[i] - config.anchor_position;
        out.residuals.segment<3>(6 * i + 3) = inverse_retraction(state.rotations[i], config.anchor_rotation);
    }
    out.energy = out.residuals.squaredNorm();
    return out;
}

// ---------------------------------------------------------------------------

TimeSeriesProblem::TimeSeriesProblem(const ObservationSet& obs, const SolverConfig& config,
                                     FeatureModel model)
    : obs_(obs), config_(config), model_(model), steps_(obs.steps()), features_(obs.features()),
      window_(config.window) {
    config_.validate();
    var_.assign(static_cast<std::size_t>(features_) * static_cast<std::size_t>(steps_), -1);
    for (int i = 0; i < features_; ++i) {
        int shared = -1;
        for (int j = 0; j < steps_; ++j) {
            if (!obs_.visible(i, j)) continue;
            int& v = var_[static_cast<std::size_t>(i) * static_cast<std::size_t>(steps_) +
                          static_cast<std::size_t>(j)];
            if (model_ == FeatureModel::Static) {
                if (shared < 0) shared = variable_count_++;
                v = shared;
            } else {
                v = variable_count_++;
            }
        }
    }
    for (int j = 0; j < steps_; ++j) {
        for (int i = 0; i < features_; ++i) {
            if (obs_.visible(i, j)) obs_rows_ += 3;
        }
    }
    if (model_ == FeatureModel::TimeSeries) {
        for (int i = 0; i < features_; ++i) {
            for (int last = window_; last < steps_; ++last) {
                bool ok = true;
                for (int s = last - window_; s <= last && ok; ++s) ok = obs_.visible(i, s);
                if (ok) windows_.push_back({i, last});
            }
        }
    }
    coeffs_free_ = model_ == FeatureModel::TimeSeries && !config_.fix_coefficients;
    coeff_offset_ = 6 * static_cast<Eigen::Index>(steps_) + 3 * static_cast<Eigen::Index>(variable_count_);
    tangent_dim_ = coeff_offset_ + (coeffs_free_ ? window_ : 0);
}

Eigen::VectorXd TimeSeriesProblem::residuals(const TrajectoryState& state) const {
    const bool reg = coeffs_free_ && include_regularizer_ && config_.coeff_regularization > 0.0;
    const int anchors = anchor_count(steps_, window_);
    Eigen::VectorXd r(obs_rows_ + 3 * static_cast<Eigen::Index>(windows_.size()) + 6 * anchors +
                      (reg ? window_ : 0));
    Eigen::Index row = 0;
    const double so = std::sqrt(config_.w_obs);
    for (int j = 0; j < steps_; ++j) {
        for (int i = 0; i < features_; ++i) {
            const auto& z = obs_.at(i, j);
            if (!z) continue;
            r.segment<3>(row) =
                so * (observe_model(state.rotations[j], state.positions[j], state.shapes.at(i, j)) - *z);
            row += 3;
        }
    }
    const double sf = std::sqrt(config_.w_f);
    for (const Window& w : windows_) {
        r.segment<3>(row) = sf * window_residual(state, w.feature, w.last);
        row += 3;
    }
    const double sa = std::sqrt(config_.w_ini);
    for (int i = 0; i < anchors; ++i) {
        r.segment<3>(row) = sa * (state.positions[i] - config_.anchor_position);
        r.segment<3>(row + 3) = sa * inverse_retraction(state.rotations[i], config_.anchor_rotation);
        row += 6;
    }
    if (reg) r.tail(window_) = std::sqrt(config_.coeff_regularization) * state.coeffs;
    return r;
}

Eigen::SparseMatrix<double> TimeSeriesProblem::jacobian(const TrajectoryState& state) const {
    const bool reg = coeffs_free_ && include_regularizer_ && config_.coeff_regularization > 0.0;
    const int anchors = anchor_count(steps_, window_);
    const Eigen::Index rows = obs_rows_ + 3 * static_cast<Eigen::Index>(windows_.size()) +
                              6 * anchors + (reg ? window_ : 0);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(obs_rows_) * 9 +
                 windows_.size() * static_cast<std::size_t>(3 * (window_ + 1) + 3 * window_) +
                 static_cast<std::size_t>(anchors) * 18);

    auto add_block = [&trip](Eigen::Index r0, Eigen::Index c0, const Mat3& b) {
        for (int c = 0; c < 3; ++c)
            for (int r = 0; r < 3; ++r) trip.emplace_back(r0 + r, c0 + c, b(r, c));
    };
    auto add_diag = [&trip](Eigen::Index r0, Eigen::Index c0, double v) {
        for (int k = 0; k < 3; ++k) trip.emplace_back(r0 + k, c0 + k, v);
    };
    const Eigen::Index feat0 = 6 * static_cast<Eigen::Index>(steps_);

    Eigen::Index row = 0;
    const double so = std::sqrt(config_.w_obs);
    for (int j = 0; j < steps_; ++j) {
        const Mat3& R = state.rotations[j].matrix();
        for (int i = 0; i < features_; ++i) {
            if (!obs_.visible(i, j)) continue;
            const Vec3 d = state.shapes.at(i, j) - state.positions[j];
            add_block(row, 6 * j, -so * R * skew(d));
            add_block(row, 6 * j + 3, -so * R);
            add_block(row, feat0 + 3 * variable(i, j), so * R);
            row += 3;
        }
    }
    const double sf = std::sqrt(config_.w_f);
    for (const Window& w : windows_) {
        add_diag(row, feat0 + 3 * variable(w.feature, w.last), sf);
        for (int k = 1; k <= window_; ++k) {
            add_diag(row, feat0 + 3 * variable(w.feature, w.last - k), -sf * state.coeffs(k - 1));
            if (coeffs_free_) {
                const Vec3 f = state.shapes.at(w.feature, w.last - k);
                for (int a = 0; a < 3; ++a) trip.emplace_back(row + a, coeff_offset_ + k - 1, -sf * f(a));
            }
        }
        row += 3;
    }
    const double sa = std::sqrt(config_.w_ini);
    for (int i = 0; i < anchors; ++i) {
        add_diag(row, 6 * i + 3, sa);
        const Tangent phi = inverse_retraction(state.rotations[i], config_.anchor_rotation);
        add_block(row + 3, 6 * i, sa * right_jacobian_inverse(phi));
        row += 6;
    }
    if (reg) {
        const double sc = std::sqrt(config_.coeff_regularization);
        for (int k = 0; k < window_; ++k) trip.emplace_back(row + k, coeff_offset_ + k, sc);
    }

    Eigen::SparseMatrix<double> J(rows, tangent_dim_);
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

TrajectoryState TimeSeriesProblem::retract(const TrajectoryState& state, const Eigen::VectorXd& delta) const {
    if (delta.size() != tangent_dim_) throw DimensionMismatchError("tangent increment has wrong size");
    TrajectoryState out = state;
    for (int j = 0; j < steps_; ++j) {
        out.rotations[j] = state.rotations[j] * exp_rotation(delta.segment<3>(6 * j));
        out.positions[j] += delta.segment<3>(6 * j + 3);
    }
    const Eigen::Index feat0 = 6 * static_cast<Eigen::Index>(steps_);
    for (int i = 0; i < features_; ++i) {
        for (int j = 0; j < steps_; ++j) {
            const int v = variable(i, j);
            if (v >= 0) {
                out.shapes.set(i, j, state.shapes.at(i, j) + delta.segment<3>(feat0 + 3 * v));
            } else if (model_ == FeatureModel::Static) {
                // Unobserved columns of a static feature follow its shared variable.
                for (int s = 0; s < steps_; ++s) {
                    const int vs = variable(i, s);
                    if (vs >= 0) {
                        out.shapes.set(i, j, state.shapes.at(i, j) + delta.segment<3>(feat0 + 3 * vs));
                        break;
                    }
                }
            }
        }
    }
    if (coeffs_free_) out.coeffs += delta.tail(window_);
    return out;
}

EnergyBreakdown TimeSeriesProblem::energy(const TrajectoryState& state) const {
    const Eigen::VectorXd r = residuals(state);
    const Eigen::Index prior_rows = 3 * static_cast<Eigen::Index>(windows_.size());
    const Eigen::Index anchor_rows = 6 * anchor_count(steps_, window_);
    EnergyBreakdown e;
    e.obs = r.head(obs_rows_).squaredNorm();
    e.prior = r.segment(obs_rows_, prior_rows).squaredNorm();
    e.anchor = r.segment(obs_rows_ + prior_rows, anchor_rows).squaredNorm();
    e.regularizer = r.tail(r.size() - obs_rows_ - prior_rows - anchor_rows).squaredNorm();
    return e;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> covisible(const ObservationSet& obs, int a, int b) {
    std::vector<int> ids;
    for (int i = 0; i < obs.features(); ++i) {
        if (obs.visible(i, a) && obs.visible(i, b)) ids.push_back(i);
    }
    return ids;
}

void back_project(const ObservationSet& obs, TrajectoryState& state) {
    for (int i = 0; i < obs.features(); ++i) {
        for (int j = 0; j < obs.steps(); ++j) {
            const auto& z = obs.at(i, j);
            state.shapes.set_valid(i, j, z.has_value());
            if (z) state.shapes.set(i, j, state.rotations[j].inverse() * *z + state.positions[j]);
        }
        // Unobserved entries take the nearest observed value (earlier step on ties).
        for (int j = 0; j < obs.steps(); ++j) {
            if (obs.visible(i, j)) continue;
            for (int d = 1; d < obs.steps(); ++d) {
                if (j - d >= 0 && obs.visible(i, j - d)) {
                    state.shapes.set(i, j, state.shapes.at(i, j - d));
                    break;
                }
                if (j + d < obs.steps() && obs.visible(i, j + d)) {
                    state.shapes.set(i, j, state.shapes.at(i, j + d));
                    break;
                }
            }
        }
    }
}

TrajectoryState empty_state(const ObservationSet& obs, const Rotation& r0, const Vec3& p0) {
    TrajectoryState s;
    s.rotations.assign(static_cast<std::size_t>(obs.steps()), r0);
    s.positions.assign(static_cast<std::size_t>(obs.steps()), p0);
    s.shapes = ShapeMatrix(obs.features(), obs.steps());
    return s;
}

void make_static(const ObservationSet& obs, TrajectoryState& state) {
    for (int i = 0; i < obs.features(); ++i) {
        Vec3 sum = Vec3::Zero();
        int n = 0;
        for (int j = 0; j < obs.steps(); ++j) {
            if (obs.visible(i, j)) {
                sum += state.shapes.at(i, j);
                ++n;
            }
        }
        if (n == 0) continue;
        for (int j = 0; j < obs.steps(); ++j) state.shapes.set(i, j, sum / n);
    }
}

}  // namespace

TrajectoryState initialize_state(const ObservationSet& obs, const SolverConfig& config) {
    if (obs.steps() < 1) throw UnsolvableInstanceError("dataset has no steps");
    TrajectoryState state = empty_state(obs, config.anchor_rotation, config.anchor_position);
    for (int j = 0; j + 1 < obs.steps(); ++j) {
        const std::vector<int> ids = covisible(obs, j, j + 1);
        if (ids.size() < 3) {
            throw InitializationGapError("steps " + std::to_string(j) + " and " + std::to_string(j + 1) +
                                         " share " + std::to_string(ids.size()) +
                                         " co-visible features; need 3");
        }
        Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(ids.size()));
        Eigen::Matrix3Xd dst(3, static_cast<Eigen::Index>(ids.size()));
        for (std::size_t k = 0; k < ids.size(); ++k) {
            src.col(static_cast<Eigen::Index>(k)) = *obs.at(ids[k], j);
            dst.col(static_cast<Eigen::Index>(k)) = *obs.at(ids[k], j + 1);
        }
        const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
        const Rotation q = Rotation::project(T.topLeftCorner<3, 3>());
        const Vec3 b = T.topRightCorner<3, 1>();
        state.rotations[j + 1] = q * state.rotations[j];
        state.positions[j + 1] = state.positions[j] - state.rotations[j + 1].inverse() * b;
    }
    back_project(obs, state);
    state.coeffs = static_prior_coefficients(config.window);
    return state;
}

namespace {

SolveReport run_lm(const TimeSeriesProblem& problem, TrajectoryState& state, const SolverConfig& config,
                   std::string method) {
    SolveReport report;
    report.method = std::move(method);
    report.lm = levenberg_marquardt(state, problem, config.lm_options());
    report.energy = problem.energy(state);
    return report;
}

}  // namespace

std::pair<TrajectoryState, SolveReport> solve(const ObservationSet& obs, const SolverConfig& config,
                                              TrajectoryState initial) {
    config.validate();
    if (obs.count() == 0) throw UnsolvableInstanceError("no observations");
    if (initial.steps() != obs.steps() || initial.features() != obs.features()) {
        throw DimensionMismatchError("initial state does not match the observation layout");
    }
    if (initial.coeffs.size() != config.window) {
        throw DimensionMismatchError("initial coefficient vector length " +
                                     std::to_string(initial.coeffs.size()) + " differs from window " +
                                     std::to_string(config.window));
    }
    TimeSeriesProblem problem(obs, config, FeatureModel::TimeSeries);
    if (problem.window_count() == 0) {
        throw UnsolvableInstanceError("no feature is observed over a full window of " +
                                      std::to_string(config.window + 1) + " steps");
    }
    for (int i = 0; i < obs.features(); ++i)
        for (int j = 0; j < obs.steps(); ++j) initial.shapes.set_valid(i, j, obs.visible(i, j));
    SolveReport report = run_lm(problem, initial, config, "deformable");
    return {std::move(initial), std::move(report)};
}

std::pair<TrajectoryState, SolveReport> solve(const ObservationSet& obs, const SolverConfig& config) {
    config.validate();
    if (obs.count() == 0) throw UnsolvableInstanceError("no observations");
    return solve(obs, config, initialize_state(obs, config));
}

std::pair<TrajectoryState, SolveReport> rigid_slam_solve(const ObservationSet& obs,
                                                         const SolverConfig& config) {
    config.validate();
    if (obs.count() == 0) throw UnsolvableInstanceError("no observations");
    TrajectoryState state = initialize_state(obs, config);
    make_static(obs, state);
    TimeSeriesProblem problem(obs, config, FeatureModel::Static);
    SolveReport report = run_lm(problem, state, config, "rigid");
    return {std::move(state), std::move(report)};
}

// ---------------------------------------------------------------------------

EdGraph make_vo_graph(const Points& source, const EdVoConfig& config) {
    const Eigen::Index n = source.cols();
    if (n < 2) throw DegenerateGraphError("need at least two points to build a deformation graph");
    const int k = std::min<int>(config.k_influence, static_cast<int>(n) - 1);
    const auto wanted = static_cast<Eigen::Index>(std::lround(config.node_fraction * static_cast<double>(n)));
    const Eigen::Index m = std::clamp<Eigen::Index>(wanted, k + 1, n);

    // Farthest-point sampling seeded at the first point.
    std::vector<Eigen::Index> chosen{0};
    Eigen::VectorXd dist = (source.colwise() - source.col(0)).colwise().norm().transpose();
    while (static_cast<Eigen::Index>(chosen.size()) < m) {
        Eigen::Index next;
        dist.maxCoeff(&next);
        chosen.push_back(next);
        dist = dist.cwiseMin((source.colwise() - source.col(next)).colwise().norm().transpose());
    }
    Points nodes(3, m);
    for (Eigen::Index j = 0; j < m; ++j) nodes.col(j) = source.col(chosen[static_cast<std::size_t>(j)]);
    return make_knn_graph(nodes, std::min<std::size_t>(config.graph_k, static_cast<std::size_t>(m - 1)), k);
}

namespace {

struct EdModel {
    const EdProblem& problem;
    Eigen::VectorXd residuals(const EdState& s) const { return ed_residuals(problem, s); }
    Eigen::MatrixXd jacobian(const EdState& s) const { return ed_jacobian(problem, s); }
    EdState retract(const EdState& s, const Eigen::VectorXd& d) const { return ed_retract(s, d); }
};

// Only the global pose moves; node parameters stay at their current values.
struct FrozenEdModel {
    const EdProblem& problem;
    Eigen::VectorXd residuals(const EdState& s) const { return ed_residuals(problem, s); }
    Eigen::MatrixXd jacobian(const EdState& s) const { return ed_jacobian(problem, s).rightCols(6); }
    EdState retract(const EdState& s, const Eigen::VectorXd& d) const {
        Eigen::VectorXd full = Eigen::VectorXd::Zero(ed_tangent_dim(s.graph));
        full.tail(6) = d;
        return ed_retract(s, full);
    }
};

}  // namespace

EdPairFit fit_ed_pair(const Points& source, const Points& target, const EdVoConfig& config,
                      const EdState* initial) {
    config.weights.validate();
    if (source.cols() != target.cols()) throw DimensionMismatchError("source/target point counts differ");
    EdPairFit fit;
    if (initial) {
        fit.state = *initial;
    } else {
        fit.state.graph = make_vo_graph(source, config);
    }
    const EdProblem problem{source, target, config.weights};
    if (config.freeze_nodes) {
        fit.lm = levenberg_marquardt(fit.state, FrozenEdModel{problem}, config.lm);
    } else {
        fit.lm = levenberg_marquardt(fit.state, EdModel{problem}, config.lm);
    }
    fit.energy = fit.lm.final_energy();
    return fit;
}

std::pair<TrajectoryState, EdVoReport> ed_vo_solve(const ObservationSet& obs, const EdVoConfig& config) {
    if (obs.steps() < 1) throw UnsolvableInstanceError("dataset has no steps");
    TrajectoryState state = empty_state(obs, config.anchor_rotation, config.anchor_position);
    EdVoReport report;
    for (int j = 0; j + 1 < obs.steps(); ++j) {
        const std::vector<int> ids = covisible(obs, j, j + 1);
        if (ids.size() < 3) {
            throw InitializationGapError("steps " + std::to_string(j) + " and " + std::to_string(j + 1) +
                                         " share " + std::to_string(ids.size()) +
                                         " co-visible features; need 3");
        }
        Points src(3, static_cast<Eigen::Index>(ids.size()));
        Points dst(3, static_cast<Eigen::Index>(ids.size()));
        for (std::size_t k = 0; k < ids.size(); ++k) {
            src.col(static_cast<Eigen::Index>(k)) = *obs.at(ids[k], j);
            dst.col(static_cast<Eigen::Index>(k)) = *obs.at(ids[k], j + 1);
        }
        EdPairFit fit = fit_ed_pair(src, dst, config);
        const GlobalPose& g = fit.state.pose;
        state.rotations[j + 1] = g.rotation * state.rotations[j];
        state.positions[j + 1] = state.positions[j] - state.rotations[j + 1].inverse() * g.translation;
        report.total_iterations += fit.lm.iterations;
        report.pairs.push_back(std::move(fit));
    }
    back_project(obs, state);
    return {std::move(state), std::move(report)};
}

}  // namespace defslam
