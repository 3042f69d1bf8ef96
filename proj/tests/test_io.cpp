#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "defslam/errors.hpp"
#include "defslam/fixtures.hpp"
#include "defslam/io.hpp"
#include "helpers.hpp"

using namespace defslam;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "defslam_io_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("format_double round-trips") {
    std::mt19937_64 rng(61);
    for (int k = 0; k < 1000; ++k) {
        const double v = std::ldexp(defslam::test::uniform(rng, -1, 1), static_cast<int>(rng() % 80) - 40);
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(3.0) == "3");
}

TEST_CASE("dataset round trip") {
    SimConfig config;
    config.n_steps = 12;
    const SimulatedDataset sim = simulate(config, 2);
    const Dataset d = dataset_from_simulation(sim);
    const json doc = dataset_to_json(d);
    CHECK(doc["schema_version"] == 1);

    const auto path = scratch_dir() / "dataset.json";
    write_text_file(path, doc.dump(1));
    const Dataset back = dataset_from_json(read_json_file(path));
    REQUIRE(back.truth.has_value());
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 12; ++j) {
            CHECK(back.observations.at(i, j) == d.observations.at(i, j));
            CHECK(back.truth->state.shapes.at(i, j) == sim.truth.shapes.at(i, j));
            CHECK(back.truth->state.shapes.valid(i, j) == sim.truth.shapes.valid(i, j));
        }
    for (int j = 0; j < 12; ++j) {
        CHECK(back.truth->state.rotations[static_cast<std::size_t>(j)].matrix() ==
              sim.truth.rotations[static_cast<std::size_t>(j)].matrix());
        CHECK(back.truth->state.positions[static_cast<std::size_t>(j)] == sim.truth.positions[static_cast<std::size_t>(j)]);
    }
    CHECK(back.truth->state.coeffs == sim.truth.coeffs);
    CHECK(back.truth->sensor->noise_sigma == sim.sensor.noise_sigma);
    CHECK(dataset_to_json(back) == doc);
}

TEST_CASE("solution and trajectory round trip") {
    std::mt19937_64 rng(62);
    Solution s;
    s.method = "rigid";
    s.state = defslam::test::random_state(rng, 4, 7, 3);
    s.state.shapes.set_valid(1, 2, false);
    s.energy_trace = {10.0, 1.5, 0.25};
    const Solution back = solution_from_json(json::parse(solution_to_json(s).dump()));
    CHECK(back.method == "rigid");
    CHECK(back.energy_trace == s.energy_trace);
    CHECK(back.state.coeffs == s.state.coeffs);
    CHECK(back.state.shapes.matrix() == s.state.shapes.matrix());
    CHECK(!back.state.shapes.valid(1, 2));
    for (int j = 0; j < 7; ++j) {
        CHECK(back.state.rotations[static_cast<std::size_t>(j)].matrix() == s.state.rotations[static_cast<std::size_t>(j)].matrix());
    }

    const std::string csv = trajectory_csv(s.state);
    const auto rows = parse_trajectory_csv(csv);
    REQUIRE(rows.size() == 7);
    for (int j = 0; j < 7; ++j) {
        CHECK(rows[static_cast<std::size_t>(j)][0] == j);
        CHECK(rows[static_cast<std::size_t>(j)][1] == s.state.positions[static_cast<std::size_t>(j)].x());
        CHECK(rows[static_cast<std::size_t>(j)][4] == heading_of(s.state.rotations[static_cast<std::size_t>(j)]));
    }
    CHECK_THROWS_AS(parse_trajectory_csv("step,x\n"), SchemaError);
}

TEST_CASE("config round trips and strict readers") {
    SimConfig sim;
    sim.seed = 99;
    sim.preset = DeformationPreset::Lung;
    sim.trajectory = TrajectoryShape::RandomWalk;
    const SimConfig sim_back = sim_config_from_json(to_json(sim));
    CHECK(to_json(sim_back) == to_json(sim));

    SolverConfig solver;
    solver.window = 3;
    solver.w_f = 2.5;
    solver.anchor_rotation = Rotation::about_z(0.3);
    CHECK(to_json(solver_config_from_json(to_json(solver))) == to_json(solver));

    EdVoConfig ed;
    ed.node_fraction = 0.4;
    CHECK(to_json(ed_vo_config_from_json(to_json(ed))) == to_json(ed));

    CHECK_THROWS_AS(sim_config_from_json(json{{"n_featurez", 3}}), SchemaError);
    CHECK_THROWS_AS(sim_config_from_json(json{{"n_features", "many"}}), SchemaError);
    CHECK_THROWS_AS(sim_config_from_json(json{{"preset", "liver"}}), SchemaError);
    CHECK_THROWS_AS(solver_config_from_json(json{{"window", 0}}), SchemaError);
    CHECK_THROWS_AS(ed_vo_config_from_json(json{{"node_fraction", 2.0}}), SchemaError);
    CHECK_THROWS_AS(rotation_from_json(json::array({1, 0, 0, 0, 1, 0, 0, 0, 2}), "r"), SchemaError);
}

TEST_CASE("schema and I/O errors") {
    CHECK_THROWS_AS(read_json_file(scratch_dir() / "missing.json"), IoError);
    const auto bad = scratch_dir() / "bad.json";
    write_text_file(bad, "{ not json");
    CHECK_THROWS_AS(read_json_file(bad), SchemaError);

    CHECK_THROWS_AS(dataset_from_json(json{{"steps", 2}}), SchemaError);
    CHECK_THROWS_AS(dataset_from_json(json{{"schema_version", 2}}), SchemaError);
    const json out_of_range = {{"schema_version", 1},
                               {"steps", 2},
                               {"features", 1},
                               {"observations", json::array({{{"step", 5}, {"feature", 0}, {"z", {1, 2, 3}}}})}};
    CHECK_THROWS_AS(dataset_from_json(out_of_range), SchemaError);
    const json duplicate = {{"schema_version", 1},
                            {"steps", 2},
                            {"features", 1},
                            {"observations", json::array({{{"step", 0}, {"feature", 0}, {"z", {1, 2, 3}}},
                                                          {{"step", 0}, {"feature", 0}, {"z", {1, 2, 3}}}})}};
    CHECK_THROWS_AS(dataset_from_json(duplicate), SchemaError);
}

TEST_CASE("fixture round trips") {
    std::mt19937_64 rng(63);
    const EdInstance inst = random_ed_instance(rng, 6, 12);
    const auto [problem, state] = ed_instance_from_json(json::parse(ed_instance_to_json(inst.problem, inst.state).dump()));
    CHECK(problem.source == inst.problem.source);
    CHECK(problem.targets == inst.problem.targets);
    CHECK(problem.weights.reg == inst.problem.weights.reg);
    CHECK(total_energy(problem.source, state.graph, state.pose, problem.targets, problem.weights) ==
          total_energy(inst.problem.source, inst.state.graph, inst.state.pose, inst.problem.targets, inst.problem.weights));
    for (std::size_t j = 0; j < state.graph.size(); ++j) {
        CHECK(state.graph.nodes[j].A == inst.state.graph.nodes[j].A);
        CHECK(state.graph.neighbors[j].size() == inst.state.graph.neighbors[j].size());
    }

    const ToyInstance toy = random_toy_instance(rng, true);
    const ToyInstance toy_back = toy_instance_from_json(json::parse(toy_instance_to_json(toy).dump()));
    CHECK(toy_objective(toy_back) == toy_objective(toy));

    const FimReport rep = toy_fim(random_toy_instance(rng, false));
    const FimReport rep_back = fim_report_from_json(json::parse(to_json(rep).dump()));
    CHECK(rep_back.rank == rep.rank);
    CHECK(rep_back.nullity == rep.nullity);
    CHECK(rep_back.singular_values == rep.singular_values);
    CHECK(rep_back.null_basis == rep.null_basis);
}
