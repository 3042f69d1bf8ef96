// defslam: simulate datasets, run the three estimators, report observability
// and run Monte Carlo batches.
//
// Exit codes: 0 success, 2 config/schema error, 3 solver failure, 4 I/O error.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "defslam/errors.hpp"
#include "defslam/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSchema = 2;
constexpr int kExitSolver = 3;
constexpr int kExitIo = 4;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> window;
    std::optional<bool> planar;
    std::optional<int> runs;
    std::optional<int> parallel;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "experiment config JSON");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--out", f.out, "output directory (simulate: output file or directory)");
    cmd->add_option("--window", f.window, "time-series window t")->check(CLI::PositiveNumber);
    cmd->add_option("--planar", f.planar, "planar trajectory and metrics (true/false)");
}

defslam::ExperimentConfig resolve(const CommonFlags& f) {
    defslam::ExperimentConfig c = defslam::load_experiment_config(f.config);
    if (f.seed) c.sim.seed = *f.seed;
    if (!f.out.empty()) c.out_dir = f.out;
    if (f.window) c.solver.window = *f.window;
    if (f.planar) c.sim.planar = *f.planar;
    if (f.runs) c.runs = *f.runs;
    if (f.parallel) c.parallel = *f.parallel;
    c.validate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deformable SLAM back-end lab"};
    app.require_subcommand(1);

    CommonFlags sim_flags, solve_flags, obs_flags, mc_flags;

    auto* simulate = app.add_subcommand("simulate", "generate a dataset with ground truth");
    add_common(simulate, sim_flags);
    int run = 0;
    std::optional<double> sigma;
    simulate->add_option("--run", run, "run index under the master seed")->check(CLI::NonNegativeNumber);
    simulate->add_option("--sigma", sigma, "fixed observation noise (mm)")->check(CLI::NonNegativeNumber);

    auto* solve = app.add_subcommand("solve", "solve a dataset with one method");
    add_common(solve, solve_flags);
    std::string dataset, method = "deformable";
    solve->add_option("--dataset,--input", dataset, "dataset JSON")->required();
    solve->add_option("--method", method, "deformable | rigid | ed_vo");

    auto* observability = app.add_subcommand("observability", "Fisher information rank report");
    add_common(observability, obs_flags);
    std::string obs_input, formulation;
    observability->add_option("--input,--dataset", obs_input, "fixture or dataset JSON")->required();
    observability->add_option("--formulation", formulation, "ed | timeseries | toy")->required();

    auto* montecarlo = app.add_subcommand("montecarlo", "seeded Monte Carlo batch over all methods");
    add_common(montecarlo, mc_flags);
    std::string methods;
    bool timing = false;
    montecarlo->add_option("--runs", mc_flags.runs, "number of runs")->check(CLI::PositiveNumber);
    montecarlo->add_option("--parallel", mc_flags.parallel, "worker threads (0 = hardware)")
        ->check(CLI::NonNegativeNumber);
    montecarlo->add_option("--method,--methods", methods, "comma-separated subset of deformable,rigid,ed_vo");
    montecarlo->add_flag("--timing", timing, "record wall-clock runtime per method");

    auto* fixture = app.add_subcommand("fixture", "write a random observability fixture");
    std::string kind, fixture_out;
    std::uint64_t fixture_seed = 1;
    fixture->add_option("kind", kind, "ed | ed_consistent | toy_moving | toy_static")->required();
    fixture->add_option("--seed", fixture_seed, "seed");
    fixture->add_option("--out", fixture_out, "output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitSchema;
    }

    try {
        if (*simulate) {
            defslam::ExperimentConfig c = resolve(sim_flags);
            defslam::SimulateOptions opt;
            opt.run = run;
            opt.sigma = sigma;
            if (!sim_flags.out.empty() && std::filesystem::path(sim_flags.out).extension() == ".json") {
                opt.out_file = sim_flags.out;
            }
            defslam::cmd_simulate(c, opt, std::cout);
        } else if (*solve) {
            defslam::cmd_solve(dataset, defslam::parse_method(method), resolve(solve_flags), std::cout);
        } else if (*observability) {
            defslam::cmd_observability(obs_input, defslam::parse_formulation(formulation), resolve(obs_flags),
                                       std::cout);
        } else if (*montecarlo) {
            defslam::ExperimentConfig c = resolve(mc_flags);
            if (!methods.empty()) {
                c.methods.clear();
                std::size_t start = 0;
                while (start <= methods.size()) {
                    const std::size_t comma = std::min(methods.find(',', start), methods.size());
                    c.methods.push_back(defslam::parse_method(methods.substr(start, comma - start)));
                    start = comma + 1;
                }
            }
            if (timing) c.timing = true;
            c.validate();
            defslam::cmd_montecarlo(c, std::cout);
        } else if (*fixture) {
            defslam::write_text_file(fixture_out, defslam::make_fixture(kind, fixture_seed).dump(1) + "\n");
            std::cout << "wrote " << fixture_out << "\n";
        }
    } catch (const defslam::SchemaError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitSchema;
    } catch (const defslam::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const defslam::Error& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
    return kExitOk;
}
