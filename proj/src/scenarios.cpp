#include "corwa/scenarios.hpp"

#include "corwa/errors.hpp"

#include <numbers>

namespace corwa {

namespace {

std::vector<double> std_of(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_of(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t k = 0; k < v.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[k];
    return out;
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

Interval box_around(const Vec& center, const Vec& half) { return {center - half, center + half}; }

}  // namespace

nlohmann::json interval_to_json(const Interval& b) { return {{"lower", std_of(b.lower)}, {"upper", std_of(b.upper)}}; }

Interval interval_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {{"lower", 0}, {"upper", 0}}, "box");
    Interval b(vec_of(j.at("lower")), vec_of(j.at("upper")));
    if (b.lower.size() != b.upper.size() || !b.valid()) throw ConfigError("box: lower must not exceed upper");
    return b;
}

void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

// ------------------------------------------------------------ double integrator

nlohmann::json DoubleIntegratorParams::to_json() const {
    return {{"agents", agents},       {"p_max", p_max},
            {"v_max", v_max},         {"u_max", u_max},
            {"max_neighbors", max_neighbors}, {"radius", radius},
            {"kp", kp},               {"kd", kd},
            {"initial", interval_to_json(initial)}, {"goal", interval_to_json(goal)},
            {"unsafe", interval_to_json(unsafe)},   {"dt", dt},
            {"steps", steps}};
}

DoubleIntegratorParams DoubleIntegratorParams::from_json(const nlohmann::json& j) {
    DoubleIntegratorParams p;
    reject_unknown_keys(j, p.to_json(), "double_integrator");
    read(j, "agents", p.agents);
    read(j, "p_max", p.p_max);
    read(j, "v_max", p.v_max);
    read(j, "u_max", p.u_max);
    read(j, "max_neighbors", p.max_neighbors);
    read(j, "radius", p.radius);
    read(j, "kp", p.kp);
    read(j, "kd", p.kd);
    if (j.contains("initial")) p.initial = interval_from_json(j.at("initial"));
    if (j.contains("goal")) p.goal = interval_from_json(j.at("goal"));
    if (j.contains("unsafe")) p.unsafe = interval_from_json(j.at("unsafe"));
    read(j, "dt", p.dt);
    read(j, "steps", p.steps);
    if (p.agents < 1) throw ConfigError("double_integrator: need at least one agent");
    return p;
}

Scenario double_integrator_scenario(const DoubleIntegratorParams& p) {
    Scenario sc;
    sc.tag = "double_integrator";
    sc.topo = SystemTopology::all_to_all(p.agents, 2, std::min(p.max_neighbors, p.agents), p.radius, {0});
    Mat a(2, 2);
    a << 0.0, 1.0, 0.0, 0.0;
    Mat b(2, 1);
    b << 0.0, 1.0;
    auto dyn = std::make_shared<const LinearDynamics>(a, Vec::Zero(2), b, "double_integrator");
    const Interval domain(make_vec({-p.p_max, -p.v_max}), make_vec({p.p_max, p.v_max}));
    for (int i = 0; i < p.agents; ++i) {
        sc.model.agents.push_back(dyn);
        sc.model.control_bounds.push_back(Interval(Vec::Constant(1, -p.u_max), Vec::Constant(1, p.u_max)));
        sc.model.state_domain.push_back(domain);
        sc.sets.push_back({Region::box(p.initial.lower, p.initial.upper), Region::box(p.goal.lower, p.goal.upper),
                           Region::box(p.unsafe.lower, p.unsafe.upper)});
        sc.equilibrium.push_back(Vec::Zero(2));
    }
    const double kp = p.kp, kd = p.kd, um = p.u_max;
    sc.nominal = [kp, kd, um](const JointState& joint, int i) {
        return Vec::Constant(1, std::clamp(-kp * joint.x(i, 0) - kd * joint.x(i, 1), -um, um));
    };
    sc.dt = p.dt;
    sc.steps = p.steps;
    sc.validate();
    return sc;
}

// ------------------------------------------------------------ robots

RobotScenarioParams::RobotScenarioParams() {
    offsets = {make_vec({-1.0, 1.0}), make_vec({-1.0, -1.0}), make_vec({-2.0, 0.0})};
    field.obstacle_centers = {make_vec({6.0, 1.0}), make_vec({10.0, -1.5}), make_vec({14.0, 1.0})};
    field.obstacle_radii = {1.0, 1.2, 1.1};
}

nlohmann::json RobotScenarioParams::to_json() const {
    nlohmann::json obstacles = nlohmann::json::array();
    for (std::size_t k = 0; k < field.obstacle_centers.size(); ++k)
        obstacles.push_back({{"center", std_of(field.obstacle_centers[k])}, {"radius", field.obstacle_radii[k]}});
    nlohmann::json offs = nlohmann::json::array();
    for (const auto& o : offsets) offs.push_back(std_of(o));
    return {{"wheel_radius", robot.wheel_radius},
            {"wheel_offset", robot.wheel_offset},
            {"k_cpl", robot.k},
            {"eps_cpl", robot.eps},
            {"k_target", field.k_target},
            {"k_form", field.k_form},
            {"k_obs", field.k_obs},
            {"k_agent", field.k_agent},
            {"d_obs", field.d_obs},
            {"d_agent", field.d_agent},
            {"k_heading", field.k_heading},
            {"max_speed", field.max_speed},
            {"max_wheel", field.max_wheel},
            {"obstacles", obstacles},
            {"leader_start", std_of(leader_start)},
            {"leader_target", std_of(leader_target)},
            {"offsets", offs},
            {"robot_radius", robot_radius},
            {"min_separation", min_separation},
            {"sensing_radius", sensing_radius},
            {"start_spread", start_spread},
            {"goal_spread", goal_spread},
            {"heading_spread", heading_spread},
            {"domain", interval_to_json(domain)},
            {"dt", dt},
            {"steps", steps}};
}

RobotScenarioParams RobotScenarioParams::from_json(const nlohmann::json& j) {
    RobotScenarioParams p;
    reject_unknown_keys(j, p.to_json(), "robot");
    read(j, "wheel_radius", p.robot.wheel_radius);
    read(j, "wheel_offset", p.robot.wheel_offset);
    read(j, "k_cpl", p.robot.k);
    read(j, "eps_cpl", p.robot.eps);
    read(j, "k_target", p.field.k_target);
    read(j, "k_form", p.field.k_form);
    read(j, "k_obs", p.field.k_obs);
    read(j, "k_agent", p.field.k_agent);
    read(j, "d_obs", p.field.d_obs);
    read(j, "d_agent", p.field.d_agent);
    read(j, "k_heading", p.field.k_heading);
    read(j, "max_speed", p.field.max_speed);
    read(j, "max_wheel", p.field.max_wheel);
    if (j.contains("obstacles")) {
        p.field.obstacle_centers.clear();
        p.field.obstacle_radii.clear();
        for (const auto& o : j.at("obstacles")) {
            reject_unknown_keys(o, {{"center", 0}, {"radius", 0}}, "robot obstacle");
            p.field.obstacle_centers.push_back(vec_of(o.at("center")));
            p.field.obstacle_radii.push_back(o.at("radius").get<double>());
        }
    }
    if (j.contains("leader_start")) p.leader_start = vec_of(j.at("leader_start"));
    if (j.contains("leader_target")) p.leader_target = vec_of(j.at("leader_target"));
    if (j.contains("offsets")) {
        p.offsets.clear();
        for (const auto& o : j.at("offsets")) p.offsets.push_back(vec_of(o));
    }
    read(j, "robot_radius", p.robot_radius);
    read(j, "min_separation", p.min_separation);
    read(j, "sensing_radius", p.sensing_radius);
    read(j, "start_spread", p.start_spread);
    read(j, "goal_spread", p.goal_spread);
    read(j, "heading_spread", p.heading_spread);
    if (j.contains("domain")) p.domain = interval_from_json(j.at("domain"));
    read(j, "dt", p.dt);
    read(j, "steps", p.steps);
    if (p.domain.size() != 3) throw ConfigError("robot: domain must be three-dimensional");
    return p;
}

Scenario robot_scenario(const RobotScenarioParams& p) {
    const int q = 1 + static_cast<int>(p.offsets.size());
    Scenario sc;
    sc.tag = "robot";
    sc.topo = SystemTopology::all_to_all(q, 3, q, p.sensing_radius, {0, 1});
    auto dyn = std::make_shared<const RobotDynamics>(p.robot);
    std::vector<Region> obstacles;
    for (std::size_t k = 0; k < p.field.obstacle_centers.size(); ++k)
        obstacles.push_back(
            Region::disc(p.field.obstacle_centers[k], p.field.obstacle_radii[k] + p.robot_radius, {0, 1}));
    obstacles.push_back(Region::pairwise_distance(p.min_separation, {0, 1}));
    const Region unsafe = Region::unite(obstacles);
    const Vec start_half = make_vec({p.start_spread, p.start_spread, p.heading_spread});
    const Vec goal_half = make_vec({p.goal_spread, p.goal_spread, p.heading_spread});
    std::vector<RobotField> fields(q, p.field);
    for (int i = 0; i < q; ++i) {
        const Vec off = i == 0 ? Vec::Zero(2) : p.offsets[i - 1];
        Vec start(3), eq(3);
        start << p.leader_start + off, 0.0;
        eq << p.leader_target + off, 0.0;
        sc.model.agents.push_back(dyn);
        sc.model.control_bounds.push_back(
            Interval(Vec::Constant(3, -p.field.max_wheel), Vec::Constant(3, p.field.max_wheel)));
        sc.model.state_domain.push_back(p.domain);
        const Interval init = box_around(start, start_half), goal = box_around(eq, goal_half);
        sc.sets.push_back({Region::box(init.lower, init.upper), Region::box(goal.lower, goal.upper), unsafe});
        sc.equilibrium.push_back(eq);
        fields[i].robot = p.robot;
        if (i == 0) {
            fields[i].target = p.leader_target;
            fields[i].leader = -1;
        } else {
            fields[i].leader = 0;
            fields[i].offset = off;
        }
    }
    const SystemTopology topo = sc.topo;
    sc.nominal = [fields, topo](const JointState& joint, int i) {
        return nominal_robot_controller(joint, topo, i, fields[i]);
    };
    sc.dt = p.dt;
    sc.steps = p.steps;
    sc.validate();
    return sc;
}

// ------------------------------------------------------------ platoon

namespace {

const char* profile_name(LeaderProfile p) {
    switch (p) {
        case LeaderProfile::constant: return "constant";
        case LeaderProfile::piecewise: return "piecewise";
        case LeaderProfile::sinusoid: return "sinusoid";
    }
    return "constant";
}

LeaderProfile profile_from(const std::string& s) {
    if (s == "constant") return LeaderProfile::constant;
    if (s == "piecewise") return LeaderProfile::piecewise;
    if (s == "sinusoid") return LeaderProfile::sinusoid;
    throw ConfigError("platoon: unknown leader profile '" + s + "'");
}

constexpr double kRampAcceleration = 1.0;

/// Leader acceleration; piecewise schedules ramp between speeds.
double leader_acceleration(const PlatoonScenarioParams& p, double t) {
    switch (p.profile) {
        case LeaderProfile::constant: return 0.0;
        case LeaderProfile::sinusoid: {
            const double w = 2.0 * std::numbers::pi / p.period;
            return p.amplitude * w * std::cos(w * t);
        }
        case LeaderProfile::piecewise:
            for (std::size_t k = 1; k < p.schedule_times.size(); ++k) {
                const double dv = p.schedule_speeds[k] - p.schedule_speeds[k - 1];
                const double t0 = p.schedule_times[k];
                if (t >= t0 && t < t0 + std::abs(dv) / kRampAcceleration) return dv > 0 ? kRampAcceleration : -kRampAcceleration;
            }
            return 0.0;
    }
    return 0.0;
}

}  // namespace

double leader_speed(const PlatoonScenarioParams& p, double t) {
    switch (p.profile) {
        case LeaderProfile::constant: return p.speed;
        case LeaderProfile::sinusoid: return p.speed + p.amplitude * std::sin(2.0 * std::numbers::pi * t / p.period);
        case LeaderProfile::piecewise: {
            double v = p.schedule_speeds.front();
            for (std::size_t k = 1; k < p.schedule_times.size(); ++k) {
                const double dv = p.schedule_speeds[k] - p.schedule_speeds[k - 1];
                const double elapsed = t - p.schedule_times[k];
                if (elapsed <= 0.0) break;
                v += std::copysign(std::min(std::abs(dv), kRampAcceleration * elapsed), dv);
            }
            return v;
        }
    }
    return p.speed;
}

nlohmann::json PlatoonScenarioParams::to_json() const {
    return {{"followers", followers},
            {"k_s", gains.k_s},
            {"k_v", gains.k_v},
            {"spacing", gains.spacing},
            {"u_max", gains.u_max},
            {"s_min", s_min},
            {"speed", speed},
            {"profile", profile_name(profile)},
            {"amplitude", amplitude},
            {"period", period},
            {"schedule_times", schedule_times},
            {"schedule_speeds", schedule_speeds},
            {"domain", interval_to_json(domain)},
            {"initial", interval_to_json(initial)},
            {"goal", interval_to_json(goal)},
            {"dt", dt},
            {"steps", steps}};
}

PlatoonScenarioParams PlatoonScenarioParams::from_json(const nlohmann::json& j) {
    PlatoonScenarioParams p;
    reject_unknown_keys(j, p.to_json(), "platoon");
    read(j, "followers", p.followers);
    read(j, "k_s", p.gains.k_s);
    read(j, "k_v", p.gains.k_v);
    read(j, "spacing", p.gains.spacing);
    read(j, "u_max", p.gains.u_max);
    read(j, "s_min", p.s_min);
    read(j, "speed", p.speed);
    if (j.contains("profile")) p.profile = profile_from(j.at("profile").get<std::string>());
    read(j, "amplitude", p.amplitude);
    read(j, "period", p.period);
    read(j, "schedule_times", p.schedule_times);
    read(j, "schedule_speeds", p.schedule_speeds);
    if (j.contains("domain")) p.domain = interval_from_json(j.at("domain"));
    if (j.contains("initial")) p.initial = interval_from_json(j.at("initial"));
    if (j.contains("goal")) p.goal = interval_from_json(j.at("goal"));
    read(j, "dt", p.dt);
    read(j, "steps", p.steps);
    if (p.followers < 1) throw ConfigError("platoon: need at least one follower");
    if (p.schedule_times.size() != p.schedule_speeds.size() || p.schedule_times.empty())
        throw ConfigError("platoon: schedule times and speeds must pair up");
    if (!(p.period > 0.0)) throw ConfigError("platoon: period must be positive");
    return p;
}

Scenario platoon_scenario(const PlatoonScenarioParams& p) {
    const int q = p.followers + 1;
    Scenario sc;
    sc.tag = "platoon";
    sc.topo.q = q;
    sc.topo.state_dim = 2;
    sc.topo.max_neighbors.assign(q, 2);
    sc.topo.max_neighbors[0] = 1;
    sc.topo.radius.assign(q, 1e6);
    sc.topo.communicable.assign(q, {});
    for (int i = 1; i < q; ++i) sc.topo.communicable[i] = {i - 1};
    sc.topo.position_slice = {0};
    sc.topo.validate();
    auto leader = std::make_shared<const PlatoonLeaderDynamics>();
    auto follower = std::make_shared<const PlatoonFollowerDynamics>();
    const Interval u(Vec::Constant(1, -p.gains.u_max), Vec::Constant(1, p.gains.u_max));
    sc.exogenous.assign(q, 0);
    sc.exogenous[0] = 1;
    for (int i = 0; i < q; ++i) {
        sc.model.agents.push_back(i == 0 ? std::shared_ptr<const AgentDynamics>(leader) : follower);
        sc.model.control_bounds.push_back(u);
        sc.model.state_domain.push_back(p.domain);
        if (i == 0) {
            sc.sets.push_back({});
        } else {
            sc.sets.push_back({Region::box(p.initial.lower, p.initial.upper), Region::box(p.goal.lower, p.goal.upper),
                               Region::halfspace(make_vec({1.0, 0.0}), p.s_min)});
        }
        sc.equilibrium.push_back(make_vec({p.gains.spacing, p.speed}));
    }
    const PlatoonGains gains = p.gains;
    sc.nominal = [gains](const JointState& joint, int i) {
        if (i == 0) return Vec::Zero(1).eval();
        return nominal_platoon_controller(joint, i, gains);
    };
    sc.exogenous_control = [p](double t, int) { return Vec::Constant(1, leader_acceleration(p, t)); };
    sc.dt = p.dt;
    sc.steps = p.steps;
    sc.validate();
    return sc;
}

JointState initial_state(const Scenario& sc, std::mt19937_64& rng) {
    JointState joint{Mat(sc.q(), sc.n()), 0.0};
    for (int i = 0; i < sc.q(); ++i) {
        const Interval& dom = sc.model.state_domain[i];
        const Region& init = sc.sets[i].initial;
        if (init.is_empty()) {
            joint.x.row(i) = sc.equilibrium[i].transpose();
            continue;
        }
        const Interval bb = init.bounding_box(dom);
        Vec x(sc.n());
        for (int t = 0; t < 1000; ++t) {
            for (int k = 0; k < sc.n(); ++k)
                x[k] = bb.upper[k] > bb.lower[k] ? std::uniform_real_distribution<double>(bb.lower[k], bb.upper[k])(rng)
                                                 : bb.lower[k];
            if (init.contains_state(x)) break;
        }
        joint.x.row(i) = x.transpose();
    }
    return joint;
}

}  // namespace corwa
