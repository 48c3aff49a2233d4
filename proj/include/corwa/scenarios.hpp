#pragma once

#include "corwa/scenario.hpp"
#include "corwa/training.hpp"

#include <json.hpp>

#include <vector>

namespace corwa {

/// Decoupled double integrators (p, v) on a line, coupled only through masks.
struct DoubleIntegratorParams {
    int agents = 2;
    double p_max = 2.0;
    double v_max = 2.0;
    double u_max = 5.0;
    int max_neighbors = 2;
    double radius = 1.0;
    double kp = 1.0;  // nominal u = -kp p - kd v
    double kd = 2.0;
    Interval initial{make_vec({0.5, -0.5}), make_vec({1.5, 0.5})};
    Interval goal{Vec::Constant(2, -0.3), Vec::Constant(2, 0.3)};
    Interval unsafe{make_vec({-2.0, -2.0}), make_vec({-1.8, -0.2})};
    double dt = 0.05;
    int steps = 200;

    nlohmann::json to_json() const;
    static DoubleIntegratorParams from_json(const nlohmann::json& j);
};

struct RobotScenarioParams {
    RobotParams robot;
    RobotField field;  // gains and obstacles; per-agent targets come from the layout below
    Vec leader_start = Vec::Zero(2);
    Vec leader_target = make_vec({20.0, 0.0});
    std::vector<Vec> offsets;  // followers relative to the leader
    double robot_radius = 0.1;
    double min_separation = 0.2;
    double sensing_radius = 2.0;
    double start_spread = 0.2;
    double goal_spread = 0.3;
    double heading_spread = 0.2;
    Interval domain{make_vec({-3.0, -4.0, -3.14159265358979}),
                    make_vec({23.0, 4.0, 3.14159265358979})};
    double dt = 0.05;
    int steps = 600;

    RobotScenarioParams();
    nlohmann::json to_json() const;
    static RobotScenarioParams from_json(const nlohmann::json& j);
};

enum class LeaderProfile { constant, piecewise, sinusoid };

struct PlatoonScenarioParams {
    int followers = 3;
    PlatoonGains gains;
    double s_min = 2.0;
    double speed = 20.0;  // cruise speed of the leader
    LeaderProfile profile = LeaderProfile::sinusoid;
    double amplitude = 1.0;  // sinusoid speed amplitude (m/s)
    double period = 20.0;
    std::vector<double> schedule_times{0.0, 50.0, 100.0};  // piecewise: speed changes
    std::vector<double> schedule_speeds{20.0, 22.0, 18.0};
    Interval domain{make_vec({0.0, 10.0}), make_vec({40.0, 30.0})};
    Interval initial{make_vec({18.0, 18.0}), make_vec({22.0, 22.0})};
    Interval goal{make_vec({19.0, 19.0}), make_vec({21.0, 21.0})};
    double dt = 0.1;
    int steps = 2000;

    nlohmann::json to_json() const;
    static PlatoonScenarioParams from_json(const nlohmann::json& j);
};

Scenario double_integrator_scenario(const DoubleIntegratorParams& p);
Scenario robot_scenario(const RobotScenarioParams& p);
Scenario platoon_scenario(const PlatoonScenarioParams& p);

/// Leader speed prescribed by the profile at time t.
double leader_speed(const PlatoonScenarioParams& p, double t);

/// Initial joint state drawn from the initial sets (platoon leader at cruise speed).
JointState initial_state(const Scenario& sc, std::mt19937_64& rng);

nlohmann::json interval_to_json(const Interval& b);
Interval interval_from_json(const nlohmann::json& j);

/// Throws ConfigError naming the first key of j that `allowed` lacks.
void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& allowed, const std::string& where);

}  // namespace corwa
