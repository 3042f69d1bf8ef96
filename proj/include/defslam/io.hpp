#pragma once

// File formats. JSON documents carry "schema_version": 1; CSV files have a
// fixed header row. Numbers are written in shortest round-trip form so every
// file reads back bit-identically.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "defslam/ed_graph.hpp"
#include "defslam/observability.hpp"
#include "defslam/simulator.hpp"
#include "defslam/ts_slam.hpp"

namespace defslam {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Throws SchemaError naming `context` when "schema_version" is missing or not 1.
void check_schema_version(const json& doc, const std::string& context);

// Configuration sections. Readers reject unknown keys; absent keys keep defaults.
json to_json(const SimConfig& c);
SimConfig sim_config_from_json(const json& j, SimConfig base = {});
json to_json(const SolverConfig& c);
SolverConfig solver_config_from_json(const json& j, SolverConfig base = {});
json to_json(const EdVoConfig& c);
EdVoConfig ed_vo_config_from_json(const json& j, EdVoConfig base = {});

json to_json(const Rotation& r);    ///< row-major 9
Rotation rotation_from_json(const json& j, const std::string& context);
json to_json(const Vec3& v);
Vec3 vec3_from_json(const json& j, const std::string& context);

// Datasets.
struct GroundTruth {
    TrajectoryState state;
    std::optional<SensorParams> sensor;
    json config;        ///< echo of the generating configuration
    bool planar = true;
};

struct Dataset {
    ObservationSet observations;
    std::optional<GroundTruth> truth;
};

json dataset_to_json(const Dataset& d);
Dataset dataset_from_json(const json& j);
Dataset dataset_from_simulation(const SimulatedDataset& sim);

// Solutions.
struct Solution {
    std::string method;
    TrajectoryState state;
    std::vector<double> energy_trace;
};

json solution_to_json(const Solution& s);
Solution solution_from_json(const json& j);

/// step,x,y,z,heading_rad
std::string trajectory_csv(const TrajectoryState& state);
std::vector<std::array<double, 5>> parse_trajectory_csv(const std::string& text);

// ED and toy fixtures.
json ed_instance_to_json(const EdProblem& problem, const EdState& state);
std::pair<EdProblem, EdState> ed_instance_from_json(const json& j);
json toy_instance_to_json(const ToyInstance& toy);
ToyInstance toy_instance_from_json(const json& j);

json to_json(const FimReport& r);
FimReport fim_report_from_json(const json& j);

}  // namespace defslam
