#include "defslam/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "defslam/errors.hpp"
#include "defslam/fixtures.hpp"
#include "defslam/observability.hpp"

namespace defslam {

std::string to_string(Method m) {
    switch (m) {
        case Method::Deformable: return "deformable";
        case Method::Rigid: return "rigid";
        case Method::EdVo: return "ed_vo";
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    if (name == "deformable") return Method::Deformable;
    if (name == "rigid") return Method::Rigid;
    if (name == "ed_vo") return Method::EdVo;
    throw SchemaError("unknown method '" + name + "' (expected deformable, rigid or ed_vo)");
}

void ExperimentConfig::validate() const {
    sim.validate();
    solver.validate();
    if (runs < 1) throw SchemaError("runs must be >= 1");
    if (parallel < 0) throw SchemaError("parallel must be >= 0");
    if (methods.empty()) throw SchemaError("at least one method is required");
    for (std::size_t i = 0; i < methods.size(); ++i)
        for (std::size_t k = i + 1; k < methods.size(); ++k)
            if (methods[i] == methods[k]) throw SchemaError("method '" + to_string(methods[i]) + "' listed twice");
}

json to_json(const ExperimentConfig& c) {
    json methods = json::array();
    for (Method m : c.methods) methods.push_back(to_string(m));
    return {{"schema_version", kSchemaVersion},
            {"sim", to_json(c.sim)},
            {"solver", to_json(c.solver)},
            {"ed_vo", to_json(c.ed)},
            {"methods", std::move(methods)},
            {"out_dir", c.out_dir.string()},
            {"runs", c.runs},
            {"parallel", c.parallel},
            {"timing", c.timing},
            {"nested", c.nested}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    check_schema_version(j, "config");
    if (!j.is_object()) throw SchemaError("config: expected an object");
    ExperimentConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "schema_version") continue;
            if (key == "sim") c.sim = sim_config_from_json(value);
            else if (key == "solver") c.solver = solver_config_from_json(value);
            else if (key == "ed_vo") c.ed = ed_vo_config_from_json(value);
            else if (key == "methods") {
                c.methods.clear();
                for (const json& m : value) c.methods.push_back(parse_method(m.get<std::string>()));
            } else if (key == "out_dir") c.out_dir = value.get<std::string>();
            else if (key == "runs") c.runs = value.get<int>();
            else if (key == "parallel") c.parallel = value.get<int>();
            else if (key == "timing") c.timing = value.get<bool>();
            else if (key == "nested") c.nested = value.get<bool>();
            else throw SchemaError("config: unknown field '" + key + "'");
        } catch (const json::exception&) {
            throw SchemaError("config." + key + ": wrong type (" + value.dump() + ")");
        }
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    if (path.empty()) return ExperimentConfig{};
    return experiment_config_from_json(read_json_file(path));
}

MethodOutput run_method(Method method, const ObservationSet& obs, const ExperimentConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    MethodOutput out;
    switch (method) {
        case Method::Deformable: {
            auto [state, report] = solve(obs, config.solver);
            out.state = std::move(state);
            out.energy_trace = std::move(report.lm.energy_trace);
            break;
        }
        case Method::Rigid: {
            auto [state, report] = rigid_slam_solve(obs, config.solver);
            out.state = std::move(state);
            out.energy_trace = std::move(report.lm.energy_trace);
            break;
        }
        case Method::EdVo: {
            EdVoConfig ed = config.ed;
            ed.anchor_rotation = config.solver.anchor_rotation;
            ed.anchor_position = config.solver.anchor_position;
            auto [state, report] = ed_vo_solve(obs, ed);
            out.state = std::move(state);
            for (const EdPairFit& p : report.pairs) out.energy_trace.push_back(p.energy);
            break;
        }
    }
    out.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct RunOutcome {
    std::vector<RunRecord> records;
    NestedRecord nested;
};

RunOutcome execute_run(const ExperimentConfig& config, int run) {
    RunOutcome out;
    out.nested.run = run;
    std::optional<SimulatedDataset> data;
    std::string sim_error;
    try {
        data = simulate(config.sim, run, config.solver.window);
    } catch (const std::exception& e) {
        sim_error = std::string("simulation: ") + e.what();
    }

    std::optional<TrajectoryState> rigid_state;
    for (Method m : config.methods) {
        RunRecord rec;
        rec.run = run;
        rec.method = m;
        if (!data) {
            rec.error = sim_error;
            out.records.push_back(std::move(rec));
            continue;
        }
        try {
            MethodOutput mo = run_method(m, data->observations, config);
            rec.metrics = evaluate_rmse(mo.state, data->truth, config.sim.planar);
            rec.runtime_s = mo.runtime_s;
            rec.ok = true;
            if (m == Method::Rigid) rigid_state = std::move(mo.state);
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
        out.records.push_back(std::move(rec));
    }

    if (config.nested) {
        try {
            if (!data) throw UnsolvableInstanceError(sim_error);
            if (!rigid_state) rigid_state = rigid_slam_solve(data->observations, config.solver).first;
            const TimeSeriesProblem rigid_problem(data->observations, config.solver, FeatureModel::Static);
            out.nested.rigid_energy = rigid_problem.energy(*rigid_state).model();
            TrajectoryState start = *rigid_state;
            start.coeffs = static_prior_coefficients(config.solver.window);
            SolverConfig from_rigid = config.solver;
            from_rigid.fix_coefficients = false;
            auto [state, report] = solve(data->observations, from_rigid, std::move(start));
            out.nested.deformable_energy = report.energy.model();
            out.nested.ok = true;
        } catch (const std::exception& e) {
            out.nested.error = e.what();
        }
    }
    return out;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void summarize(const ExperimentConfig& config, MonteCarloResult& result) {
    const std::size_t k = config.methods.size();
    for (std::size_t mi = 0; mi < k; ++mi) {
        MethodSummary s;
        s.method = config.methods[mi];
        std::vector<double> x, y, z, heading, feature, position;
        for (int r = 0; r < config.runs; ++r) {
            const RunRecord& rec = result.records[static_cast<std::size_t>(r) * k + mi];
            if (!rec.ok) {
                ++s.runs_failed;
                continue;
            }
            ++s.runs_ok;
            x.push_back(rec.metrics.x);
            y.push_back(rec.metrics.y);
            z.push_back(rec.metrics.z);
            heading.push_back(rec.metrics.heading);
            feature.push_back(rec.metrics.feature);
            position.push_back(rec.metrics.position());
        }
        s.median = {median_of(x), median_of(y), median_of(z), median_of(heading), median_of(feature)};
        s.mean = {mean_of(x), mean_of(y), mean_of(z), mean_of(heading), mean_of(feature)};
        s.median_position = median_of(position);
        s.mean_position = mean_of(position);
        result.summary.push_back(s);
    }

    // Wins: strictly lowest position RMSE among the methods that succeeded.
    for (int r = 0; r < config.runs; ++r) {
        std::optional<std::size_t> best;
        double best_value = 0.0;
        bool tie = false;
        for (std::size_t mi = 0; mi < k; ++mi) {
            const RunRecord& rec = result.records[static_cast<std::size_t>(r) * k + mi];
            if (!rec.ok) continue;
            const double v = rec.metrics.position();
            if (!best || v < best_value) {
                best = mi;
                best_value = v;
                tie = false;
            } else if (v == best_value) {
                tie = true;
            }
        }
        if (best && !tie) ++result.summary[*best].wins;
    }

    const auto index_of = [&](Method m) -> std::optional<std::size_t> {
        for (std::size_t mi = 0; mi < k; ++mi)
            if (config.methods[mi] == m) return mi;
        return std::nullopt;
    };
    const auto d = index_of(Method::Deformable), g = index_of(Method::Rigid), e = index_of(Method::EdVo);
    if (d && g && e) {
        int count = 0;
        for (int r = 0; r < config.runs; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * k;
            const RunRecord& rd = result.records[base + *d];
            const RunRecord& rg = result.records[base + *g];
            const RunRecord& re = result.records[base + *e];
            if (rd.ok && rg.ok && re.ok && rd.metrics.position() < rg.metrics.position() &&
                rg.metrics.position() < re.metrics.position()) {
                ++count;
            }
        }
        result.ordering_count = count;
        result.ordering_fraction = static_cast<double>(count) / static_cast<double>(config.runs);
    }
}

std::string csv_escape(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

std::string num(double v) { return std::isnan(v) ? std::string() : format_double(v); }

}  // namespace

MonteCarloResult run_montecarlo(const ExperimentConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int workers = std::max(1, std::min(config.runs, config.parallel == 0
                                                              ? static_cast<int>(std::thread::hardware_concurrency())
                                                              : config.parallel));
    std::vector<RunOutcome> outcomes(static_cast<std::size_t>(config.runs));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < config.runs; r = next++) outcomes[static_cast<std::size_t>(r)] = execute_run(config, r);
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    MonteCarloResult result;
    for (RunOutcome& o : outcomes) {
        for (RunRecord& rec : o.records) result.records.push_back(std::move(rec));
        if (config.nested) result.nested.push_back(std::move(o.nested));
    }
    summarize(config, result);
    result.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

std::string metrics_csv_header() { return "run,method,rmse_x,rmse_y,rmse_heading,feature_rmse,runtime_s\n"; }

std::string metrics_csv_row(int run, Method method, const RmseMetrics& m, std::optional<double> runtime_s) {
    return std::to_string(run) + "," + to_string(method) + "," + num(m.x) + "," + num(m.y) + "," + num(m.heading) +
           "," + num(m.feature) + "," + (runtime_s ? num(*runtime_s) : std::string()) + "\n";
}

std::string per_run_csv(const MonteCarloResult& result, bool timing) {
    std::string out = metrics_csv_header();
    for (const RunRecord& rec : result.records) {
        if (rec.ok) {
            out += metrics_csv_row(rec.run, rec.method, rec.metrics,
                                   timing ? std::optional<double>(rec.runtime_s) : std::nullopt);
        } else {
            out += std::to_string(rec.run) + "," + to_string(rec.method) + ",,,,,\n";
        }
    }
    return out;
}

std::string summary_csv(const MonteCarloResult& result) {
    std::string out =
        "method,runs_ok,runs_failed,median_rmse_x,mean_rmse_x,median_rmse_y,mean_rmse_y,median_rmse_position,"
        "mean_rmse_position,median_rmse_heading,mean_rmse_heading,median_feature_rmse,mean_feature_rmse,wins,"
        "ordering_fraction\n";
    const std::string ordering = result.ordering_fraction ? num(*result.ordering_fraction) : std::string();
    for (const MethodSummary& s : result.summary) {
        out += to_string(s.method) + "," + std::to_string(s.runs_ok) + "," + std::to_string(s.runs_failed) + "," +
               num(s.median.x) + "," + num(s.mean.x) + "," + num(s.median.y) + "," + num(s.mean.y) + "," +
               num(s.median_position) + "," + num(s.mean_position) + "," + num(s.median.heading) + "," +
               num(s.mean.heading) + "," + num(s.median.feature) + "," + num(s.mean.feature) + "," +
               std::to_string(s.wins) + "," + ordering + "\n";
    }
    return out;
}

std::string nested_csv(const MonteCarloResult& result) {
    std::string out = "run,rigid_energy,deformable_energy,difference,status\n";
    for (const NestedRecord& n : result.nested) {
        if (n.ok) {
            out += std::to_string(n.run) + "," + num(n.rigid_energy) + "," + num(n.deformable_energy) + "," +
                   num(n.deformable_energy - n.rigid_energy) + ",ok\n";
        } else {
            out += std::to_string(n.run) + ",,,," + csv_escape("error: " + n.error) + "\n";
        }
    }
    return out;
}

std::string errors_csv(const MonteCarloResult& result) {
    std::string out = "run,method,error\n";
    for (const RunRecord& rec : result.records) {
        if (!rec.ok) out += std::to_string(rec.run) + "," + to_string(rec.method) + "," + csv_escape(rec.error) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

std::filesystem::path cmd_simulate(const ExperimentConfig& config, const SimulateOptions& options,
                                   std::ostream& log) {
    SimConfig sim = config.sim;
    if (options.sigma) {
        if (!(*options.sigma >= 0.0)) throw SchemaError("sigma must be non-negative");
        sim.noise_min = sim.noise_max = *options.sigma;
    }
    const SimulatedDataset data = simulate(sim, options.run, config.solver.window);
    const std::filesystem::path out = options.out_file.empty() ? config.out_dir / "dataset.json" : options.out_file;
    write_text_file(out, dataset_to_json(dataset_from_simulation(data)).dump(1) + "\n");

    const ObservationSet& obs = data.observations;
    int min_covisible = obs.features();
    for (int j = 0; j + 1 < obs.steps(); ++j) {
        int shared = 0;
        for (int i = 0; i < obs.features(); ++i) shared += obs.visible(i, j) && obs.visible(i, j + 1);
        min_covisible = std::min(min_covisible, shared);
    }
    const double fraction = static_cast<double>(obs.count()) / static_cast<double>(obs.features() * obs.steps());
    log << "seed " << sim.seed << " run " << options.run << ": " << obs.features() << " features x " << obs.steps()
        << " steps, " << obs.count() << " observations (" << format_double(std::round(fraction * 1000.0) / 10.0)
        << "% visible), min co-visible " << min_covisible << ", fov " << format_double(data.sensor.fov_deg)
        << " deg, sigma " << format_double(data.sensor.noise_sigma) << "\n"
        << "wrote " << out.string() << "\n";
    return out;
}

void cmd_solve(const std::filesystem::path& dataset, Method method, const ExperimentConfig& config,
               std::ostream& log) {
    const Dataset data = dataset_from_json(read_json_file(dataset));
    const MethodOutput mo = run_method(method, data.observations, config);
    const std::string name = to_string(method);

    Solution sol{name, mo.state, mo.energy_trace};
    const auto sol_path = config.out_dir / ("solution_" + name + ".json");
    const auto traj_path = config.out_dir / ("trajectory_" + name + ".csv");
    write_text_file(sol_path, solution_to_json(sol).dump(1) + "\n");
    write_text_file(traj_path, trajectory_csv(mo.state));
    log << name << ": " << mo.energy_trace.size() << " trace entries, final energy "
        << (mo.energy_trace.empty() ? std::string("n/a") : format_double(mo.energy_trace.back())) << "\n"
        << "wrote " << sol_path.string() << "\nwrote " << traj_path.string() << "\n";

    if (data.truth) {
        const RmseMetrics m = evaluate_rmse(mo.state, data.truth->state, data.truth->planar);
        int run = 0;
        if (data.truth->config.is_object() && data.truth->config.contains("run")) {
            run = data.truth->config["run"].get<int>();
        }
        const auto metrics_path = config.out_dir / ("metrics_" + name + ".csv");
        write_text_file(metrics_path, metrics_csv_header() + metrics_csv_row(run, method, m, mo.runtime_s));
        log << "rmse x " << format_double(m.x) << " y " << format_double(m.y) << " heading "
            << format_double(m.heading) << " feature " << format_double(m.feature) << "\n"
            << "wrote " << metrics_path.string() << "\n";
    }
}

Formulation parse_formulation(const std::string& name) {
    if (name == "ed") return Formulation::Ed;
    if (name == "timeseries") return Formulation::TimeSeries;
    if (name == "toy") return Formulation::Toy;
    throw SchemaError("unknown formulation '" + name + "' (expected ed, timeseries or toy)");
}

std::string to_string(Formulation f) {
    switch (f) {
        case Formulation::Ed: return "ed";
        case Formulation::TimeSeries: return "timeseries";
        case Formulation::Toy: return "toy";
    }
    return "unknown";
}

namespace {

void log_spectrum(const FimReport& r, std::ostream& log) {
    log << "dimension " << r.dimension() << ", rank " << r.rank << ", nullity " << r.nullity << "\nspectrum:";
    const Eigen::Index n = r.singular_values.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (n > 12 && i == 6) {
            log << " ...";
            i = n - 6;
        }
        log << " " << format_double(r.singular_values(i));
    }
    log << "\n";
}

}  // namespace

json cmd_observability(const std::filesystem::path& input, Formulation formulation, const ExperimentConfig& config,
                       std::ostream& log) {
    const json doc = read_json_file(input);
    json out = {{"schema_version", kSchemaVersion}, {"formulation", to_string(formulation)}};

    switch (formulation) {
        case Formulation::Ed: {
            const auto [problem, state] = ed_instance_from_json(doc);
            const FimReport report = rank_analysis(ed_fim(problem, state));
            log_spectrum(report, log);
            out["fim"] = to_json(report);
            const GaugeReport gauge = gauge_null_ratios(problem, state);
            out["gauge"] = {{"ratios", gauge.ratios},
                            {"max_residual", gauge.max_residual},
                            {"tolerance", gauge.tolerance},
                            {"zero_residual", gauge.max_residual <= 1e-10},
                            {"passed", gauge.passed()}};
            log << "gauge ratios:";
            for (double r : gauge.ratios) log << " " << format_double(r);
            log << (gauge.max_residual <= 1e-10 ? "" : " (instance is not at zero residual)") << "\n";

            json laws = json::array();
            bool all = true;
            for (Eigen::Index i = 0; i < problem.source.cols(); ++i) {
                EdPointInstance pi{problem.source.col(i), problem.targets.col(i), state.graph, state.pose};
                const HessianLawReport h = check_hessian_law(pi);
                all = all && h.passed();
                laws.push_back({{"point", i},
                                {"h2_error", h.h2_error},
                                {"h1_error", h.h1_error},
                                {"tolerance", h.tolerance},
                                {"hessian_rank", h.hessian_rank},
                                {"passed", h.passed()}});
            }
            out["hessian_law"] = {{"points", std::move(laws)}, {"passed", all}};
            log << "hessian law " << (all ? "holds" : "violated") << " on " << problem.source.cols() << " points\n";
            break;
        }
        case Formulation::Toy: {
            const ToyInstance toy = toy_instance_from_json(doc);
            const FimReport report = toy_fim(toy);
            log_spectrum(report, log);
            out["fim"] = to_json(report);
            out["delta_share"] = null_share(report, toy_delta_offset(toy), 2);
            break;
        }
        case Formulation::TimeSeries: {
            const Dataset data = dataset_from_json(doc);
            TrajectoryState state;
            if (data.truth) {
                state = data.truth->state;
                if (state.coeffs.size() != config.solver.window) {
                    throw SchemaError("ground-truth coefficient count differs from the configured window");
                }
            } else {
                state = solve(data.observations, config.solver).first;
            }
            const TimeSeriesFim ts = timeseries_fim(data.observations, state, config.solver);
            log_spectrum(ts.report, log);
            log << "null-space share on c: " << format_double(ts.coefficient_share) << "\n";
            out["fim"] = to_json(ts.report);
            out["coefficient_offset"] = ts.coefficient_offset;
            out["coefficient_count"] = ts.coefficient_count;
            out["coefficient_share"] = ts.coefficient_share;
            out["evaluated_at"] = data.truth ? "ground_truth" : "deformable_solution";
            break;
        }
    }
    const auto path = config.out_dir / ("observability_" + to_string(formulation) + ".json");
    write_text_file(path, out.dump(1) + "\n");
    log << "wrote " << path.string() << "\n";
    return out;
}

MonteCarloResult cmd_montecarlo(const ExperimentConfig& config, std::ostream& log) {
    MonteCarloResult result = run_montecarlo(config);
    write_text_file(config.out_dir / "per_run.csv", per_run_csv(result, config.timing));
    write_text_file(config.out_dir / "summary.csv", summary_csv(result));
    if (config.nested) write_text_file(config.out_dir / "nested.csv", nested_csv(result));
    write_text_file(config.out_dir / "errors.csv", errors_csv(result));

    int failed = 0;
    for (const RunRecord& r : result.records) failed += !r.ok;
    log << config.runs << " runs x " << config.methods.size() << " methods, " << failed << " failed, "
        << format_double(std::round(result.wall_s * 10.0) / 10.0) << " s\n";
    for (const MethodSummary& s : result.summary) {
        log << "  " << to_string(s.method) << ": median position rmse " << format_double(s.median_position)
            << ", wins " << s.wins << "\n";
    }
    if (result.ordering_fraction) {
        log << "  ordering deformable < rigid < ed_vo in " << result.ordering_count << "/" << config.runs
            << " runs\n";
    }
    log << "wrote " << (config.out_dir / "summary.csv").string() << "\n";
    return result;
}

json make_fixture(const std::string& kind, std::uint64_t seed) {
    std::mt19937_64 rng = make_rng(seed, 0);
    if (kind == "ed") {
        const EdInstance inst = random_ed_instance(rng, 6, 20);
        return ed_instance_to_json(inst.problem, inst.state);
    }
    if (kind == "ed_consistent") {
        const EdInstance inst = random_consistent_ed_instance(rng, 6, 20);
        return ed_instance_to_json(inst.problem, inst.state);
    }
    if (kind == "toy_moving") return toy_instance_to_json(random_toy_instance(rng, true));
    if (kind == "toy_static") return toy_instance_to_json(random_toy_instance(rng, false));
    throw SchemaError("unknown fixture kind '" + kind + "' (expected ed, ed_consistent, toy_moving or toy_static)");
}

}  // namespace defslam
