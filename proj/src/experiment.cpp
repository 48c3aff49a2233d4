#include "corwa/experiment.hpp"

#include "corwa/errors.hpp"
#include "corwa/io.hpp"

namespace corwa {

using nlohmann::json;

namespace {

json simulation_json(const SimulationBlock& s) { return {{"rollouts", s.rollouts}, {"steps", s.steps}}; }

SimulationBlock simulation_from(const json& j) {
    reject_unknown_keys(j, simulation_json({}), "simulation");
    SimulationBlock s;
    if (j.contains("rollouts")) s.rollouts = j.at("rollouts").get<int>();
    if (j.contains("steps")) s.steps = j.at("steps").get<int>();
    if (s.rollouts < 1) throw ConfigError("simulation.rollouts must be >= 1");
    return s;
}

json report_json(const ReportBlock& r) { return {{"grid", r.grid}, {"agent", r.agent}, {"axes", r.axes}}; }

ReportBlock report_from(const json& j) {
    reject_unknown_keys(j, report_json({}), "report");
    ReportBlock r;
    if (j.contains("grid")) r.grid = j.at("grid").get<int>();
    if (j.contains("agent")) r.agent = j.at("agent").get<int>();
    if (j.contains("axes")) r.axes = j.at("axes").get<std::vector<int>>();
    if (r.grid < 2) throw ConfigError("report.grid must be >= 2");
    if (r.axes.size() != 2 || r.axes[0] == r.axes[1]) throw ConfigError("report.axes must name two distinct columns");
    return r;
}

}  // namespace

Scenario ExperimentConfig::build() const {
    if (scenario == "double_integrator") return double_integrator_scenario(double_integrator);
    if (scenario == "robot") return robot_scenario(robot);
    if (scenario == "platoon") return platoon_scenario(platoon);
    throw ConfigError("unknown scenario '" + scenario + "'");
}

MetricGeometry ExperimentConfig::geometry() const {
    if (scenario == "robot") return robot_geometry(robot);
    if (scenario == "platoon") return platoon_geometry();
    return {};
}

ScenarioFamily ExperimentConfig::family() const {
    if (scenario == "platoon") {
        const PlatoonScenarioParams base = platoon;
        return [base](int size) {
            PlatoonScenarioParams p = base;
            p.followers = size;
            return platoon_scenario(p);
        };
    }
    if (scenario == "double_integrator") {
        const DoubleIntegratorParams base = double_integrator;
        return [base](int size) {
            DoubleIntegratorParams p = base;
            p.agents = size;
            return double_integrator_scenario(p);
        };
    }
    throw ConfigError("scenario '" + scenario + "' has no size family");
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
    seed = s;
    cegis.training.seed = s;
    cegis.surrogate.seed = s;
    redver.seed = s;
    redver.cegis = cegis;
}

json ExperimentConfig::to_json() const {
    json loop = cegis.to_json();
    loop.erase("training");
    loop.erase("verifier");
    json rv = redver.to_json();
    rv.erase("cegis");
    rv.erase("seed");
    json j = {{"schema_version", kSchemaVersion},
              {"scenario", scenario},
              {"training", cegis.training.to_json()},
              {"verifier", cegis.verifier.to_json()},
              {"cegis", loop},
              {"redver", rv},
              {"simulation", simulation_json(simulation)},
              {"report", report_json(report)},
              {"seed", seed},
              {"output_dir", output_dir}};
    if (scenario == "double_integrator") j["double_integrator"] = double_integrator.to_json();
    if (scenario == "robot") j["robot"] = robot.to_json();
    if (scenario == "platoon") j["platoon"] = platoon.to_json();
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    reject_unknown_keys(j,
                        {{"schema_version", 0}, {"scenario", 0}, {"double_integrator", 0}, {"robot", 0},
                         {"platoon", 0}, {"training", 0}, {"verifier", 0}, {"cegis", 0}, {"redver", 0},
                         {"simulation", 0}, {"report", 0}, {"seed", 0}, {"output_dir", 0}},
                        "config");
    if (!j.contains("schema_version")) throw ConfigError("config: schema_version missing");
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion)
        throw ConfigError("config: schema_version " + std::to_string(version) + " is not supported");
    ExperimentConfig c;
    if (j.contains("scenario")) c.scenario = j.at("scenario").get<std::string>();
    if (c.scenario != "double_integrator" && c.scenario != "robot" && c.scenario != "platoon")
        throw ConfigError("unknown scenario '" + c.scenario + "'");
    if (j.contains("double_integrator"))
        c.double_integrator = DoubleIntegratorParams::from_json(j.at("double_integrator"));
    if (j.contains("robot")) c.robot = RobotScenarioParams::from_json(j.at("robot"));
    if (j.contains("platoon")) c.platoon = PlatoonScenarioParams::from_json(j.at("platoon"));

    json loop = j.contains("cegis") ? j.at("cegis") : json::object();
    if (!loop.is_object()) throw ConfigError("config: cegis must be an object");
    if (loop.contains("training") || loop.contains("verifier"))
        throw ConfigError("config: training and verifier belong at the top level");
    if (j.contains("training")) loop["training"] = j.at("training");
    if (j.contains("verifier")) loop["verifier"] = j.at("verifier");
    c.cegis = CegisConfig::from_json(loop);

    json rv = j.contains("redver") ? j.at("redver") : json::object();
    if (!rv.is_object()) throw ConfigError("config: redver must be an object");
    if (rv.contains("cegis") || rv.contains("seed")) throw ConfigError("config: redver takes cegis and seed from the top level");
    rv["cegis"] = c.cegis.to_json();
    c.redver = RedVerConfig::from_json(rv);

    if (j.contains("simulation")) c.simulation = simulation_from(j.at("simulation"));
    if (j.contains("report")) c.report = report_from(j.at("report"));
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.apply_seed(j.contains("seed") ? j.at("seed").get<std::uint64_t>() : 0);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace corwa
