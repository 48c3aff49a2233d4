#pragma once

#include "corwa/cegis.hpp"
#include "corwa/scenarios.hpp"
#include "corwa/simulate.hpp"
#include "corwa/transfer.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace corwa {

struct SimulationBlock {
    int rollouts = 10;
    int steps = -1;  // -1: scenario horizon
};

struct ReportBlock {
    int grid = 200;
    int agent = 0;
    std::vector<int> axes{0, 1};
};

/// One file per experiment. Training and verifier blocks live at the top
/// level; the cegis block holds the loop settings only.
struct ExperimentConfig {
    static constexpr int kSchemaVersion = 1;

    std::string scenario = "double_integrator";
    DoubleIntegratorParams double_integrator;
    RobotScenarioParams robot;
    PlatoonScenarioParams platoon;
    CegisConfig cegis;
    RedVerConfig redver;  // its cegis block mirrors the one above
    SimulationBlock simulation;
    ReportBlock report;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";

    Scenario build() const;
    MetricGeometry geometry() const;
    /// Same scenario at another size (followers for the platoon, agents for
    /// the double integrator).
    ScenarioFamily family() const;
    /// Propagates the seed into every seeded block.
    void apply_seed(std::uint64_t s);

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
};

}  // namespace corwa
