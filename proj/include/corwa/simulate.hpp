#pragma once

#include "corwa/certificate.hpp"
#include "corwa/scenarios.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace corwa {

/// Scenario facts the metrics need but the dynamics do not carry.
struct MetricGeometry {
    bool spacing_states = false;  // column 0 is the gap to the predecessor, column 1 the speed
    std::vector<Vec> obstacle_centers;
    std::vector<double> obstacle_radii;
    double agent_radius = 0.0;
};

MetricGeometry robot_geometry(const RobotScenarioParams& p);
MetricGeometry platoon_geometry();

/// Gap over closing speed; infinite when the pair is not closing.
double time_to_collision(double gap, double closing_speed);

struct MetricsReport {
    double tracking_rmse = 0.0;  // velocity units
    double average_ttc = 0.0;    // seconds, NaN when no pair ever closes
    double min_obstacle_distance = 0.0;  // infinite without obstacles
    std::vector<double> obstacle_distances;
    double min_agent_distance = 0.0;
    double mean_speed = 0.0;
    int safety_violations = 0;

    static std::vector<std::string> columns();
    std::vector<double> row() const;
    nlohmann::json to_json() const;
};

struct ClipEvent {
    int step = 0;
    int agent = 0;
};

struct SimulationResult {
    std::vector<JointState> states;  // steps + 1 entries
    std::vector<std::vector<Vec>> controls;
    std::vector<ClipEvent> clips;
    MetricsReport metrics;

    /// step,time,agent,x0..x{n-1},u0..
    std::string trajectory_csv() const;
};

/// Closed-loop rollout with the certificate's controllers (nominal law when
/// cert is null). steps < 0 uses the scenario horizon. Throws
/// IntegrationError naming the step on a non-finite state.
SimulationResult simulate(const Scenario& sc, const CoRwaCertificate* cert, const JointState& x0,
                          const MetricGeometry& geometry, int steps = -1);

MetricsReport compute_metrics(const Scenario& sc, const SimulationResult& sim, const MetricGeometry& geometry);

}  // namespace corwa
