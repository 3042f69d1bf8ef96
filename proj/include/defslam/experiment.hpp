#pragma once

// Experiment plumbing behind the command-line tool: method dispatch, the
// Monte Carlo batch runner and the per-command drivers. Every command writes
// its files under an output directory and logs a short summary to a stream.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "defslam/io.hpp"
#include "defslam/simulator.hpp"
#include "defslam/ts_slam.hpp"

namespace defslam {

enum class Method { Deformable, Rigid, EdVo };

std::string to_string(Method m);
/// "deformable", "rigid", "ed_vo". Throws SchemaError.
Method parse_method(const std::string& name);

struct ExperimentConfig {
    SimConfig sim;
    SolverConfig solver;
    EdVoConfig ed;
    std::vector<Method> methods{Method::Deformable, Method::Rigid, Method::EdVo};
    std::filesystem::path out_dir = "out";
    int runs = 50;
    int parallel = 1;           ///< worker threads; 0 picks the hardware concurrency
    bool timing = false;        ///< fill runtime_s (makes CSVs run-dependent)
    bool nested = true;         ///< deformable-from-rigid check per run

    /// Throws SchemaError.
    void validate() const;
};

json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const json& j);
/// Reads and validates a config file (defaults when `path` is empty).
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct MethodOutput {
    TrajectoryState state;
    std::vector<double> energy_trace;
    double runtime_s = 0.0;
};

/// Runs one estimator on the observations. The ED baseline reports the final
/// energy of each consecutive-pair fit as its trace.
MethodOutput run_method(Method method, const ObservationSet& obs, const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Monte Carlo.

struct RunRecord {
    int run = 0;
    Method method = Method::Deformable;
    bool ok = false;
    std::string error;
    RmseMetrics metrics;
    double runtime_s = 0.0;
};

/// Rigid solution versus the deformable solve started from it, compared on the
/// model energy E_obs + E_f + E_ini.
struct NestedRecord {
    int run = 0;
    bool ok = false;
    std::string error;
    double rigid_energy = 0.0;
    double deformable_energy = 0.0;
};

struct MethodSummary {
    Method method = Method::Deformable;
    int runs_ok = 0;
    int runs_failed = 0;
    RmseMetrics median;
    RmseMetrics mean;
    double median_position = 0.0;
    double mean_position = 0.0;
    int wins = 0;               ///< runs where this method has the lowest position RMSE
};

struct MonteCarloResult {
    std::vector<RunRecord> records;     ///< run-major, methods in config order
    std::vector<NestedRecord> nested;
    std::vector<MethodSummary> summary;
    /// Fraction of runs with position RMSE deformable < rigid < ed_vo; empty
    /// unless all three methods ran.
    std::optional<double> ordering_fraction;
    int ordering_count = 0;
    double wall_s = 0.0;
};

/// Simulates `runs` datasets (run index = stream index under the master seed)
/// and solves each with every configured method on a bounded worker pool.
/// Per-run failures are recorded and the batch continues.
MonteCarloResult run_montecarlo(const ExperimentConfig& config);

/// run,method,rmse_x,rmse_y,rmse_heading,feature_rmse,runtime_s
std::string per_run_csv(const MonteCarloResult& result, bool timing);
/// method,runs_ok,runs_failed,median_rmse_x,…,wins,ordering_fraction
std::string summary_csv(const MonteCarloResult& result);
/// run,rigid_energy,deformable_energy,difference,status
std::string nested_csv(const MonteCarloResult& result);
/// run,method,error
std::string errors_csv(const MonteCarloResult& result);

std::string metrics_csv_header();
std::string metrics_csv_row(int run, Method method, const RmseMetrics& m, std::optional<double> runtime_s);

// ---------------------------------------------------------------------------
// Commands. Errors propagate as defslam::Error subclasses.

struct SimulateOptions {
    int run = 0;
    std::optional<double> sigma;        ///< fixed noise level
    std::filesystem::path out_file;     ///< defaults to <out_dir>/dataset.json
};

std::filesystem::path cmd_simulate(const ExperimentConfig& config, const SimulateOptions& options,
                                   std::ostream& log);

/// Writes solution_<method>.json, trajectory_<method>.csv and, when the
/// dataset carries ground truth, metrics_<method>.csv into the output directory.
void cmd_solve(const std::filesystem::path& dataset, Method method, const ExperimentConfig& config,
               std::ostream& log);

enum class Formulation { Ed, TimeSeries, Toy };
Formulation parse_formulation(const std::string& name);
std::string to_string(Formulation f);

/// Writes observability_<formulation>.json. Time-series reports are taken at
/// the dataset's ground truth when present, otherwise at the deformable solution.
json cmd_observability(const std::filesystem::path& input, Formulation formulation,
                       const ExperimentConfig& config, std::ostream& log);

MonteCarloResult cmd_montecarlo(const ExperimentConfig& config, std::ostream& log);

/// Random fixture: "ed", "ed_consistent", "toy_moving" or "toy_static".
json make_fixture(const std::string& kind, std::uint64_t seed);

}  // namespace defslam
