#include "defslam/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "defslam/errors.hpp"

namespace defslam {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_schema_version(const json& doc, const std::string& context) {
    if (!doc.is_object() || !doc.contains("schema_version")) {
        throw SchemaError(context + ": missing field 'schema_version'");
    }
    if (doc["schema_version"] != kSchemaVersion) {
        throw SchemaError(context + ": unsupported schema_version " + doc["schema_version"].dump());
    }
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& context) {
    if (!j.is_object()) throw SchemaError(context + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw SchemaError(context + ": unknown field '" + key + "'");
    }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& context) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw SchemaError(context + "." + key + ": wrong type (" + j.at(key).dump() + ")");
    }
}

const json& require(const json& j, const char* key, const std::string& context) {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(context + ": missing field '" + key + "'");
    return j.at(key);
}

std::vector<double> number_array(const json& j, std::size_t n, const std::string& context) {
    if (!j.is_array() || j.size() != n) {
        throw SchemaError(context + ": expected an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) throw SchemaError(context + ": non-numeric entry " + v.dump());
        out.push_back(v.get<double>());
    }
    return out;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& context) {
    if (!j.is_array()) throw SchemaError(context + ": expected an array");
    const std::vector<double> v = number_array(j, j.size(), context);
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json poses_to_json(const TrajectoryState& s) {
    json poses = json::array();
    for (int j = 0; j < s.steps(); ++j) {
        poses.push_back({{"R", to_json(s.rotations[static_cast<std::size_t>(j)])},
                         {"p", to_json(s.positions[static_cast<std::size_t>(j)])}});
    }
    return poses;
}

void poses_from_json(const json& j, TrajectoryState& s, const std::string& context) {
    if (!j.is_array()) throw SchemaError(context + ": expected an array of poses");
    for (std::size_t k = 0; k < j.size(); ++k) {
        const std::string ctx = context + "[" + std::to_string(k) + "]";
        s.rotations.push_back(rotation_from_json(require(j[k], "R", ctx), ctx + ".R"));
        s.positions.push_back(vec3_from_json(require(j[k], "p", ctx), ctx + ".p"));
    }
}

json positions_to_json(const ShapeMatrix& b) {
    json rows = json::array();
    for (int i = 0; i < b.features(); ++i) {
        json row = json::array();
        for (int j = 0; j < b.steps(); ++j) row.push_back(to_json(b.at(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

void positions_from_json(const json& j, ShapeMatrix& b, const std::string& context) {
    if (!j.is_array() || static_cast<int>(j.size()) != b.features()) {
        throw SchemaError(context + ": expected " + std::to_string(b.features()) + " feature rows");
    }
    for (int i = 0; i < b.features(); ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != b.steps()) {
            throw SchemaError(context + "[" + std::to_string(i) + "]: expected " + std::to_string(b.steps()) +
                              " positions");
        }
        for (int s = 0; s < b.steps(); ++s) {
            b.set(i, s, vec3_from_json(row[static_cast<std::size_t>(s)],
                                       context + "[" + std::to_string(i) + "][" + std::to_string(s) + "]"));
        }
    }
}

}  // namespace

json to_json(const Rotation& r) {
    json a = json::array();
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) a.push_back(r.matrix()(row, col));
    return a;
}

Rotation rotation_from_json(const json& j, const std::string& context) {
    const std::vector<double> v = number_array(j, 9, context);
    Mat3 m;
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) m(row, col) = v[static_cast<std::size_t>(3 * row + col)];
    try {
        return Rotation::from_matrix(m);
    } catch (const InvalidRotationError& e) {
        throw SchemaError(context + ": " + e.what());
    }
}

json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j, const std::string& context) {
    const std::vector<double> v = number_array(j, 3, context);
    return Vec3(v[0], v[1], v[2]);
}

// ---------------------------------------------------------------------------

json to_json(const SimConfig& c) {
    return {{"workspace_x", c.workspace_x},
            {"workspace_y", c.workspace_y},
            {"n_features", c.n_features},
            {"n_steps", c.n_steps},
            {"fov_min_deg", c.fov_min_deg},
            {"fov_max_deg", c.fov_max_deg},
            {"noise_min", c.noise_min},
            {"noise_max", c.noise_max},
            {"seed", c.seed},
            {"planar", c.planar},
            {"preset", to_string(c.preset)},
            {"trajectory", to_string(c.trajectory)},
            {"hold_steps", c.hold_steps},
            {"step_length", c.step_length},
            {"arc_radius", c.arc_radius},
            {"feature_range_min", c.feature_range_min},
            {"feature_range_max", c.feature_range_max},
            {"min_covisible", c.min_covisible},
            {"amplitude_scale", c.amplitude_scale}};
}

SimConfig sim_config_from_json(const json& j, SimConfig c) {
    const std::string ctx = "sim";
    reject_unknown(j, {"workspace_x", "workspace_y", "n_features", "n_steps", "fov_min_deg", "fov_max_deg",
                       "noise_min", "noise_max", "seed", "planar", "preset", "trajectory", "hold_steps",
                       "step_length", "arc_radius", "feature_range_min", "feature_range_max", "min_covisible",
                       "amplitude_scale"},
                   ctx);
    read_field(j, "workspace_x", c.workspace_x, ctx);
    read_field(j, "workspace_y", c.workspace_y, ctx);
    read_field(j, "n_features", c.n_features, ctx);
    read_field(j, "n_steps", c.n_steps, ctx);
    read_field(j, "fov_min_deg", c.fov_min_deg, ctx);
    read_field(j, "fov_max_deg", c.fov_max_deg, ctx);
    read_field(j, "noise_min", c.noise_min, ctx);
    read_field(j, "noise_max", c.noise_max, ctx);
    read_field(j, "seed", c.seed, ctx);
    read_field(j, "planar", c.planar, ctx);
    std::string name;
    read_field(j, "preset", name, ctx);
    if (!name.empty()) c.preset = parse_preset(name);
    name.clear();
    read_field(j, "trajectory", name, ctx);
    if (!name.empty()) c.trajectory = parse_trajectory_shape(name);
    read_field(j, "hold_steps", c.hold_steps, ctx);
    read_field(j, "step_length", c.step_length, ctx);
    read_field(j, "arc_radius", c.arc_radius, ctx);
    read_field(j, "feature_range_min", c.feature_range_min, ctx);
    read_field(j, "feature_range_max", c.feature_range_max, ctx);
    read_field(j, "min_covisible", c.min_covisible, ctx);
    read_field(j, "amplitude_scale", c.amplitude_scale, ctx);
    c.validate();
    return c;
}

json to_json(const SolverConfig& c) {
    return {{"max_iterations", c.max_iterations},
            {"initial_damping", c.initial_damping},
            {"damping_up", c.damping_up},
            {"damping_down", c.damping_down},
            {"gradient_tolerance", c.gradient_tolerance},
            {"step_tolerance", c.step_tolerance},
            {"function_tolerance", c.function_tolerance},
            {"window", c.window},
            {"coeff_regularization", c.coeff_regularization},
            {"w_obs", c.w_obs},
            {"w_f", c.w_f},
            {"w_ini", c.w_ini},
            {"fix_coefficients", c.fix_coefficients},
            {"anchor_rotation", to_json(c.anchor_rotation)},
            {"anchor_position", to_json(c.anchor_position)}};
}

SolverConfig solver_config_from_json(const json& j, SolverConfig c) {
    const std::string ctx = "solver";
    reject_unknown(j, {"max_iterations", "initial_damping", "damping_up", "damping_down", "gradient_tolerance",
                       "step_tolerance", "function_tolerance", "window", "coeff_regularization", "w_obs", "w_f",
                       "w_ini", "fix_coefficients", "anchor_rotation", "anchor_position"},
                   ctx);
    read_field(j, "max_iterations", c.max_iterations, ctx);
    read_field(j, "initial_damping", c.initial_damping, ctx);
    read_field(j, "damping_up", c.damping_up, ctx);
    read_field(j, "damping_down", c.damping_down, ctx);
    read_field(j, "gradient_tolerance", c.gradient_tolerance, ctx);
    read_field(j, "step_tolerance", c.step_tolerance, ctx);
    read_field(j, "function_tolerance", c.function_tolerance, ctx);
    read_field(j, "window", c.window, ctx);
    read_field(j, "coeff_regularization", c.coeff_regularization, ctx);
    read_field(j, "w_obs", c.w_obs, ctx);
    read_field(j, "w_f", c.w_f, ctx);
    read_field(j, "w_ini", c.w_ini, ctx);
    read_field(j, "fix_coefficients", c.fix_coefficients, ctx);
    if (j.contains("anchor_rotation")) c.anchor_rotation = rotation_from_json(j["anchor_rotation"], ctx + ".anchor_rotation");
    if (j.contains("anchor_position")) c.anchor_position = vec3_from_json(j["anchor_position"], ctx + ".anchor_position");
    c.validate();
    return c;
}

json to_json(const EdVoConfig& c) {
    return {{"w_rot", c.weights.rot},
            {"w_reg", c.weights.reg},
            {"w_data", c.weights.data},
            {"k_influence", c.k_influence},
            {"graph_k", c.graph_k},
            {"node_fraction", c.node_fraction},
            {"freeze_nodes", c.freeze_nodes},
            {"max_iterations", c.lm.max_iterations},
            {"function_tolerance", c.lm.function_tolerance}};
}

EdVoConfig ed_vo_config_from_json(const json& j, EdVoConfig c) {
    const std::string ctx = "ed_vo";
    reject_unknown(j, {"w_rot", "w_reg", "w_data", "k_influence", "graph_k", "node_fraction", "freeze_nodes",
                       "max_iterations", "function_tolerance"},
                   ctx);
    read_field(j, "w_rot", c.weights.rot, ctx);
    read_field(j, "w_reg", c.weights.reg, ctx);
    read_field(j, "w_data", c.weights.data, ctx);
    read_field(j, "k_influence", c.k_influence, ctx);
    read_field(j, "graph_k", c.graph_k, ctx);
    read_field(j, "node_fraction", c.node_fraction, ctx);
    read_field(j, "freeze_nodes", c.freeze_nodes, ctx);
    read_field(j, "max_iterations", c.lm.max_iterations, ctx);
    read_field(j, "function_tolerance", c.lm.function_tolerance, ctx);
    c.weights.validate();
    if (c.k_influence < 1) throw SchemaError("ed_vo.k_influence must be >= 1");
    if (!(c.node_fraction > 0.0 && c.node_fraction <= 1.0)) throw SchemaError("ed_vo.node_fraction must be in (0, 1]");
    if (c.lm.max_iterations < 1) throw SchemaError("ed_vo.max_iterations must be >= 1");
    return c;
}

// ---------------------------------------------------------------------------

json dataset_to_json(const Dataset& d) {
    const ObservationSet& obs = d.observations;
    json observations = json::array();
    for (int j = 0; j < obs.steps(); ++j) {
        for (int i = 0; i < obs.features(); ++i) {
            if (const auto& z = obs.at(i, j)) observations.push_back({{"step", j}, {"feature", i}, {"z", to_json(*z)}});
        }
    }
    json doc = {{"schema_version", kSchemaVersion},
                {"steps", obs.steps()},
                {"features", obs.features()},
                {"observations", std::move(observations)}};
    if (d.truth) {
        const GroundTruth& gt = *d.truth;
        json truth = {{"poses", poses_to_json(gt.state)},
                      {"features", positions_to_json(gt.state.shapes)},
                      {"coefficients", vector_to_json(gt.state.coeffs)},
                      {"planar", gt.planar},
                      {"config", gt.config}};
        if (gt.sensor) truth["sensor"] = {{"fov_deg", gt.sensor->fov_deg}, {"noise_sigma", gt.sensor->noise_sigma}};
        doc["ground_truth"] = std::move(truth);
    }
    return doc;
}

Dataset dataset_from_json(const json& j) {
    check_schema_version(j, "dataset");
    reject_unknown(j, {"schema_version", "steps", "features", "observations", "ground_truth"}, "dataset");
    int steps = 0, features = 0;
    read_field(j, "steps", steps, "dataset");
    read_field(j, "features", features, "dataset");
    require(j, "steps", "dataset");
    require(j, "features", "dataset");
    if (steps < 1 || features < 1) throw SchemaError("dataset: steps and features must be >= 1");

    Dataset d;
    d.observations = ObservationSet(features, steps);
    const json& list = require(j, "observations", "dataset");
    if (!list.is_array()) throw SchemaError("dataset.observations: expected an array");
    for (std::size_t k = 0; k < list.size(); ++k) {
        const std::string ctx = "dataset.observations[" + std::to_string(k) + "]";
        const json& o = list[k];
        reject_unknown(o, {"step", "feature", "z"}, ctx);
        int step = -1, feature = -1;
        read_field(o, "step", step, ctx);
        read_field(o, "feature", feature, ctx);
        if (step < 0 || step >= steps || feature < 0 || feature >= features) {
            throw SchemaError(ctx + ": step/feature index out of range");
        }
        if (d.observations.visible(feature, step)) throw SchemaError(ctx + ": duplicate observation");
        d.observations.set(feature, step, vec3_from_json(require(o, "z", ctx), ctx + ".z"));
    }

    if (j.contains("ground_truth")) {
        const json& t = j["ground_truth"];
        const std::string ctx = "dataset.ground_truth";
        reject_unknown(t, {"poses", "features", "coefficients", "planar", "config", "sensor"}, ctx);
        GroundTruth gt;
        poses_from_json(require(t, "poses", ctx), gt.state, ctx + ".poses");
        if (gt.state.steps() != steps) throw SchemaError(ctx + ".poses: expected " + std::to_string(steps) + " poses");
        gt.state.shapes = ShapeMatrix(features, steps);
        positions_from_json(require(t, "features", ctx), gt.state.shapes, ctx + ".features");
        for (int i = 0; i < features; ++i)
            for (int s = 0; s < steps; ++s) gt.state.shapes.set_valid(i, s, d.observations.visible(i, s));
        if (t.contains("coefficients")) gt.state.coeffs = vector_from_json(t["coefficients"], ctx + ".coefficients");
        read_field(t, "planar", gt.planar, ctx);
        if (t.contains("config")) gt.config = t["config"];
        if (t.contains("sensor")) {
            SensorParams sp;
            reject_unknown(t["sensor"], {"fov_deg", "noise_sigma"}, ctx + ".sensor");
            read_field(t["sensor"], "fov_deg", sp.fov_deg, ctx + ".sensor");
            read_field(t["sensor"], "noise_sigma", sp.noise_sigma, ctx + ".sensor");
            gt.sensor = sp;
        }
        d.truth = std::move(gt);
    }
    return d;
}

Dataset dataset_from_simulation(const SimulatedDataset& sim) {
    Dataset d;
    d.observations = sim.observations;
    GroundTruth gt;
    gt.state = sim.truth;
    gt.sensor = sim.sensor;
    gt.planar = sim.config.planar;
    gt.config = to_json(sim.config);
    gt.config["run"] = sim.run;
    d.truth = std::move(gt);
    return d;
}

// ---------------------------------------------------------------------------

json solution_to_json(const Solution& s) {
    json valid = json::array();
    for (int i = 0; i < s.state.features(); ++i) {
        json row = json::array();
        for (int j = 0; j < s.state.shapes.steps(); ++j) row.push_back(s.state.shapes.valid(i, j) ? 1 : 0);
        valid.push_back(std::move(row));
    }
    return {{"schema_version", kSchemaVersion},
            {"method", s.method},
            {"steps", s.state.steps()},
            {"features", s.state.features()},
            {"poses", poses_to_json(s.state)},
            {"shapes", {{"positions", positions_to_json(s.state.shapes)}, {"valid", std::move(valid)}}},
            {"coefficients", vector_to_json(s.state.coeffs)},
            {"energy_trace", s.energy_trace}};
}

Solution solution_from_json(const json& j) {
    check_schema_version(j, "solution");
    reject_unknown(j, {"schema_version", "method", "steps", "features", "poses", "shapes", "coefficients",
                       "energy_trace"},
                   "solution");
    Solution s;
    read_field(j, "method", s.method, "solution");
    int steps = 0, features = 0;
    read_field(j, "steps", steps, "solution");
    read_field(j, "features", features, "solution");
    poses_from_json(require(j, "poses", "solution"), s.state, "solution.poses");
    if (s.state.steps() != steps) throw SchemaError("solution.poses: pose count differs from steps");
    s.state.shapes = ShapeMatrix(features, steps);
    const json& shapes = require(j, "shapes", "solution");
    positions_from_json(require(shapes, "positions", "solution.shapes"), s.state.shapes, "solution.shapes.positions");
    const json& valid = require(shapes, "valid", "solution.shapes");
    if (!valid.is_array() || static_cast<int>(valid.size()) != features) {
        throw SchemaError("solution.shapes.valid: expected one row per feature");
    }
    for (int i = 0; i < features; ++i) {
        const json& row = valid[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != steps) {
            throw SchemaError("solution.shapes.valid: row " + std::to_string(i) + " has the wrong length");
        }
        for (int k = 0; k < steps; ++k) s.state.shapes.set_valid(i, k, row[static_cast<std::size_t>(k)].get<int>() != 0);
    }
    s.state.coeffs = vector_from_json(require(j, "coefficients", "solution"), "solution.coefficients");
    read_field(j, "energy_trace", s.energy_trace, "solution");
    return s;
}

std::string trajectory_csv(const TrajectoryState& state) {
    std::string out = "step,x,y,z,heading_rad\n";
    for (int j = 0; j < state.steps(); ++j) {
        const Vec3& p = state.positions[static_cast<std::size_t>(j)];
        out += std::to_string(j) + "," + format_double(p.x()) + "," + format_double(p.y()) + "," +
               format_double(p.z()) + "," + format_double(heading_of(state.rotations[static_cast<std::size_t>(j)])) +
               "\n";
    }
    return out;
}

std::vector<std::array<double, 5>> parse_trajectory_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "step,x,y,z,heading_rad") {
        throw SchemaError("trajectory csv: unexpected header '" + line + "'");
    }
    std::vector<std::array<double, 5>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<double, 5> row{};
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int k = 0; k < 5; ++k) {
            const auto res = std::from_chars(p, end, row[static_cast<std::size_t>(k)]);
            if (res.ec != std::errc{}) throw SchemaError("trajectory csv: bad number in '" + line + "'");
            p = res.ptr;
            if (k < 4) {
                if (p == end || *p != ',') throw SchemaError("trajectory csv: expected 5 columns in '" + line + "'");
                ++p;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

json ed_instance_to_json(const EdProblem& problem, const EdState& state) {
    json nodes = json::array();
    for (const EdNode& n : state.graph.nodes) {
        json a = json::array();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) a.push_back(n.A(r, c));
        nodes.push_back({{"g", to_json(n.g)}, {"A", std::move(a)}, {"t", to_json(n.t)}});
    }
    json adjacency = json::array();
    for (const auto& list : state.graph.neighbors) {
        json row = json::array();
        for (const Neighbor& nb : list) row.push_back({{"index", nb.index}, {"alpha", nb.alpha}});
        adjacency.push_back(std::move(row));
    }
    auto points = [](const Points& p) {
        json a = json::array();
        for (Eigen::Index i = 0; i < p.cols(); ++i) a.push_back(to_json(Vec3(p.col(i))));
        return a;
    };
    return {{"schema_version", kSchemaVersion},
            {"kind", "ed"},
            {"nodes", std::move(nodes)},
            {"neighbors", std::move(adjacency)},
            {"k_influence", state.graph.k_influence},
            {"pose", {{"R", to_json(state.pose.rotation)}, {"T", to_json(state.pose.translation)}}},
            {"source", points(problem.source)},
            {"targets", points(problem.targets)},
            {"weights", {{"rot", problem.weights.rot}, {"reg", problem.weights.reg}, {"data", problem.weights.data}}}};
}

std::pair<EdProblem, EdState> ed_instance_from_json(const json& j) {
    check_schema_version(j, "ed fixture");
    const std::string ctx = "ed fixture";
    reject_unknown(j, {"schema_version", "kind", "nodes", "neighbors", "k_influence", "pose", "source", "targets",
                       "weights"},
                   ctx);
    EdProblem problem;
    EdState state;
    const json& nodes = require(j, "nodes", ctx);
    if (!nodes.is_array()) throw SchemaError(ctx + ".nodes: expected an array");
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const std::string nctx = ctx + ".nodes[" + std::to_string(k) + "]";
        EdNode n;
        n.g = vec3_from_json(require(nodes[k], "g", nctx), nctx + ".g");
        const std::vector<double> a = number_array(require(nodes[k], "A", nctx), 9, nctx + ".A");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) n.A(r, c) = a[static_cast<std::size_t>(3 * r + c)];
        n.t = vec3_from_json(require(nodes[k], "t", nctx), nctx + ".t");
        state.graph.nodes.push_back(n);
    }
    const json& adjacency = require(j, "neighbors", ctx);
    if (!adjacency.is_array()) throw SchemaError(ctx + ".neighbors: expected an array");
    for (const json& row : adjacency) {
        std::vector<Neighbor> list;
        for (const json& e : row) {
            Neighbor nb;
            if (e.is_number_unsigned()) {
                nb.index = e.get<std::size_t>();
            } else {
                read_field(e, "index", nb.index, ctx + ".neighbors");
                read_field(e, "alpha", nb.alpha, ctx + ".neighbors");
            }
            list.push_back(nb);
        }
        state.graph.neighbors.push_back(std::move(list));
    }
    read_field(j, "k_influence", state.graph.k_influence, ctx);
    state.graph.validate();
    if (j.contains("pose")) {
        state.pose.rotation = rotation_from_json(require(j["pose"], "R", ctx + ".pose"), ctx + ".pose.R");
        state.pose.translation = vec3_from_json(require(j["pose"], "T", ctx + ".pose"), ctx + ".pose.T");
    }
    auto points = [&](const char* key) {
        const json& a = require(j, key, ctx);
        if (!a.is_array()) throw SchemaError(ctx + "." + key + ": expected an array");
        Points p(3, static_cast<Eigen::Index>(a.size()));
        for (std::size_t i = 0; i < a.size(); ++i) {
            p.col(static_cast<Eigen::Index>(i)) = vec3_from_json(a[i], ctx + "." + key + "[" + std::to_string(i) + "]");
        }
        return p;
    };
    problem.source = points("source");
    problem.targets = points("targets");
    if (problem.source.cols() != problem.targets.cols()) throw SchemaError(ctx + ": source/targets size mismatch");
    if (j.contains("weights")) {
        reject_unknown(j["weights"], {"rot", "reg", "data"}, ctx + ".weights");
        read_field(j["weights"], "rot", problem.weights.rot, ctx + ".weights");
        read_field(j["weights"], "reg", problem.weights.reg, ctx + ".weights");
        read_field(j["weights"], "data", problem.weights.data, ctx + ".weights");
    }
    problem.weights.validate();
    return {std::move(problem), std::move(state)};
}

json toy_instance_to_json(const ToyInstance& toy) {
    json rotations = json::array(), positions = json::array(), features = json::array(), observations = json::array();
    for (int j = 0; j < 3; ++j) {
        rotations.push_back(to_json(toy.rotations[static_cast<std::size_t>(j)]));
        positions.push_back(to_json(toy.positions[static_cast<std::size_t>(j)]));
    }
    for (std::size_t i = 0; i < toy.features.size(); ++i) {
        json f = json::array(), z = json::array();
        for (int j = 0; j < 3; ++j) {
            f.push_back(to_json(toy.features[i][static_cast<std::size_t>(j)]));
            z.push_back(to_json(toy.observations[i][static_cast<std::size_t>(j)]));
        }
        features.push_back(std::move(f));
        observations.push_back(std::move(z));
    }
    return {{"schema_version", kSchemaVersion},
            {"kind", "toy"},
            {"rotations", std::move(rotations)},
            {"positions", std::move(positions)},
            {"features", std::move(features)},
            {"observations", std::move(observations)},
            {"delta", {toy.delta(0), toy.delta(1)}}};
}

ToyInstance toy_instance_from_json(const json& j) {
    check_schema_version(j, "toy fixture");
    const std::string ctx = "toy fixture";
    reject_unknown(j, {"schema_version", "kind", "rotations", "positions", "features", "observations", "delta"}, ctx);
    ToyInstance toy;
    const json& rot = require(j, "rotations", ctx);
    const json& pos = require(j, "positions", ctx);
    if (!rot.is_array() || rot.size() != 3 || !pos.is_array() || pos.size() != 3) {
        throw SchemaError(ctx + ": expected three rotations and three positions");
    }
    for (std::size_t k = 0; k < 3; ++k) {
        toy.rotations[k] = rotation_from_json(rot[k], ctx + ".rotations[" + std::to_string(k) + "]");
        toy.positions[k] = vec3_from_json(pos[k], ctx + ".positions[" + std::to_string(k) + "]");
    }
    auto triples = [&](const char* key) {
        std::vector<std::array<Vec3, 3>> out;
        const json& a = require(j, key, ctx);
        if (!a.is_array()) throw SchemaError(ctx + "." + key + ": expected an array");
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_array() || a[i].size() != 3) {
                throw SchemaError(ctx + "." + key + "[" + std::to_string(i) + "]: expected three points");
            }
            std::array<Vec3, 3> t;
            for (std::size_t k = 0; k < 3; ++k) {
                t[k] = vec3_from_json(a[i][k], ctx + "." + key + "[" + std::to_string(i) + "][" + std::to_string(k) + "]");
            }
            out.push_back(t);
        }
        return out;
    };
    toy.features = triples("features");
    toy.observations = triples("observations");
    const std::vector<double> d = number_array(require(j, "delta", ctx), 2, ctx + ".delta");
    toy.delta = Eigen::Vector2d(d[0], d[1]);
    try {
        toy.validate();
    } catch (const Error& e) {
        throw SchemaError(ctx + ": " + e.what());
    }
    return toy;
}

json to_json(const FimReport& r) {
    json basis = json::array();
    for (Eigen::Index c = 0; c < r.null_basis.cols(); ++c) basis.push_back(vector_to_json(r.null_basis.col(c)));
    return {{"singular_values", vector_to_json(r.singular_values)},
            {"rank", r.rank},
            {"nullity", r.nullity},
            {"dimension", r.dimension()},
            {"tolerance_used", r.tolerance_used},
            {"null_basis", std::move(basis)}};
}

FimReport fim_report_from_json(const json& j) {
    const std::string ctx = "fim report";
    FimReport r;
    r.singular_values = vector_from_json(require(j, "singular_values", ctx), ctx + ".singular_values");
    read_field(j, "rank", r.rank, ctx);
    read_field(j, "nullity", r.nullity, ctx);
    read_field(j, "tolerance_used", r.tolerance_used, ctx);
    const json& basis = require(j, "null_basis", ctx);
    r.null_basis.resize(r.singular_values.size(), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t c = 0; c < basis.size(); ++c) {
        r.null_basis.col(static_cast<Eigen::Index>(c)) = vector_from_json(basis[c], ctx + ".null_basis");
    }
    return r;
}

}  // namespace defslam
