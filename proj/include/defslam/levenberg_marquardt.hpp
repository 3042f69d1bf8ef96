#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) driver shared by the time-series
// solver, the rigid baseline and the ED odometry fits.
//
// A Model supplies
//   Eigen::VectorXd residuals(const State&) const;
//   Jacobian        jacobian(const State&) const;   // MatrixXd or SparseMatrix<double>
//   State           retract(const State&, const Eigen::VectorXd&) const;
// and the driver minimizes |r|² over the tangent increments.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace defslam {

struct LmOptions {
    int max_iterations = 100;
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.1;
    double max_damping = 1e16;
    double gradient_tolerance = 1e-10;   ///< on |Jᵀr|∞
    double step_tolerance = 1e-10;       ///< on |δ|∞
    double function_tolerance = 1e-15;   ///< on relative energy decrease
};

enum class LmTermination {
    GradientTolerance,
    StepTolerance,
    FunctionTolerance,
    MaxIterations,
    DampingOverflow,
};

inline const char* to_string(LmTermination t) {
    switch (t) {
        case LmTermination::GradientTolerance: return "gradient_tolerance";
        case LmTermination::StepTolerance: return "step_tolerance";
        case LmTermination::FunctionTolerance: return "function_tolerance";
        case LmTermination::MaxIterations: return "max_iterations";
        case LmTermination::DampingOverflow: return "damping_overflow";
    }
    return "unknown";
}

struct LmReport {
    int iterations = 0;
    LmTermination termination = LmTermination::MaxIterations;
    /// Initial energy followed by the energy after every accepted step.
    std::vector<double> energy_trace;

    double final_energy() const { return energy_trace.empty() ? 0.0 : energy_trace.back(); }
    bool converged() const {
        return termination == LmTermination::GradientTolerance ||
               termination == LmTermination::StepTolerance ||
               termination == LmTermination::FunctionTolerance;
    }
};

namespace detail {

// Solves (H + λ·D) δ = −g with D = diag(H) clamped away from zero.
class DenseDampedSolver {
public:
    void prepare(const Eigen::MatrixXd& J) { h_ = J.transpose() * J; }
    bool solve(double lambda, const Eigen::VectorXd& g, Eigen::VectorXd& delta) {
        Eigen::MatrixXd a = h_;
        a.diagonal() += lambda * h_.diagonal().cwiseMax(kMinDiag);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
        delta = ldlt.solve(-g);
        return delta.allFinite();
    }

private:
    static constexpr double kMinDiag = 1e-9;
    Eigen::MatrixXd h_;
};

class SparseDampedSolver {
public:
    void prepare(const Eigen::SparseMatrix<double>& J) {
        h_ = J.transpose() * J;
        h_.makeCompressed();
        diag_ = h_.diagonal().cwiseMax(kMinDiag);
        if (!analyzed_ || h_.nonZeros() != pattern_nnz_) {
            Eigen::SparseMatrix<double> probe = h_;
            add_diagonal(probe, Eigen::VectorXd::Ones(diag_.size()));
            ldlt_.analyzePattern(probe);
            analyzed_ = true;
            pattern_nnz_ = h_.nonZeros();
        }
    }
    bool solve(double lambda, const Eigen::VectorXd& g, Eigen::VectorXd& delta) {
        Eigen::SparseMatrix<double> a = h_;
        add_diagonal(a, lambda * diag_);
        ldlt_.factorize(a);
        if (ldlt_.info() != Eigen::Success) return false;
        if ((ldlt_.vectorD().array() <= 0.0).any()) return false;
        delta = ldlt_.solve(-g);
        return delta.allFinite();
    }

private:
    static constexpr double kMinDiag = 1e-9;

    static void add_diagonal(Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& d) {
        Eigen::SparseMatrix<double> dm(a.rows(), a.cols());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(d.size()));
        for (Eigen::Index i = 0; i < d.size(); ++i) trip.emplace_back(i, i, d(i));
        dm.setFromTriplets(trip.begin(), trip.end());
        a += dm;
    }

    Eigen::SparseMatrix<double> h_;
    Eigen::VectorXd diag_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
    bool analyzed_ = false;
    Eigen::Index pattern_nnz_ = -1;
};

}  // namespace detail

template <class State, class Model>
LmReport levenberg_marquardt(State& x, const Model& model, const LmOptions& opt) {
    using Jacobian = std::decay_t<decltype(model.jacobian(x))>;
    using Solver = std::conditional_t<std::is_same_v<Jacobian, Eigen::SparseMatrix<double>>,
                                      detail::SparseDampedSolver, detail::DenseDampedSolver>;
    LmReport report;
    Eigen::VectorXd r = model.residuals(x);
    double energy = r.squaredNorm();
    report.energy_trace.push_back(energy);
    double lambda = opt.initial_damping;
    Solver solver;

    for (int it = 0; it < opt.max_iterations; ++it) {
        report.iterations = it + 1;
        const Jacobian J = model.jacobian(x);
        const Eigen::VectorXd g = J.transpose() * r;
        if (g.size() == 0 || g.cwiseAbs().maxCoeff() <= opt.gradient_tolerance) {
            report.termination = LmTermination::GradientTolerance;
            return report;
        }
        solver.prepare(J);

        while (true) {
            Eigen::VectorXd delta;
            if (!solver.solve(lambda, g, delta)) {
                lambda *= opt.damping_up;
                if (lambda > opt.max_damping) {
                    report.termination = LmTermination::DampingOverflow;
                    return report;
                }
                continue;
            }
            if (delta.cwiseAbs().maxCoeff() <= opt.step_tolerance) {
                report.termination = LmTermination::StepTolerance;
                return report;
            }
            State candidate = model.retract(x, delta);
            Eigen::VectorXd r_new = model.residuals(candidate);
            const double e_new = r_new.squaredNorm();
            if (std::isfinite(e_new) && e_new < energy) {
                const double decrease = energy - e_new;
                x = std::move(candidate);
                r = std::move(r_new);
                energy = e_new;
                report.energy_trace.push_back(energy);
                lambda = std::max(lambda * opt.damping_down, 1e-15);
                if (decrease <= opt.function_tolerance * std::max(energy, 1e-300)) {
                    report.termination = LmTermination::FunctionTolerance;
                    return report;
                }
                break;
            }
            // Rejected. A step whose energy matches the current one to rounding
            // means the iterate is already stationary.
            if (std::isfinite(e_new) && e_new - energy <= opt.function_tolerance * energy) {
                report.termination = LmTermination::FunctionTolerance;
                return report;
            }
            lambda *= opt.damping_up;
            if (lambda > opt.max_damping) {
                report.termination = LmTermination::DampingOverflow;
                return report;
            }
        }
    }
    report.termination = LmTermination::MaxIterations;
    return report;
}

}  // namespace defslam
