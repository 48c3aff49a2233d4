#include "corwa/simulate.hpp"

#include "corwa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace corwa {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

Vec position(const Mat& x, const SystemTopology& topo, int i) {
    Vec p(topo.position_slice.size());
    for (std::size_t k = 0; k < topo.position_slice.size(); ++k) p[k] = x(i, topo.position_slice[k]);
    return p;
}

Vec control_for(const Scenario& sc, const CoRwaCertificate* cert, const JointState& joint, int i) {
    if (sc.is_exogenous(i)) return sc.exogenous_at(joint.time, i);
    if (cert) return cert->pi[i].forward(extended_state(joint, sc.topo, i).flat());
    if (sc.nominal) return sc.nominal(joint, i);
    return Vec::Zero(sc.model.agents[i]->control_dim());
}

void check_dimensions(const Scenario& sc, const CoRwaCertificate& cert) {
    cert.validate();
    if (cert.q() != sc.q())
        throw DimensionError("simulate: certificate has " + std::to_string(cert.q()) + " agents, scenario " +
                             std::to_string(sc.q()));
    for (int i = 0; i < sc.q(); ++i) {
        if (!cert.is_active(i)) continue;
        if (cert.pi[i].shift.size() != sc.topo.extended_dim(i) || cert.V[i].input_dim() != sc.n() ||
            cert.h[i].input_dim() != sc.topo.extended_dim(i) ||
            cert.pi[i].out_scale.size() != sc.model.agents[i]->control_dim())
            throw DimensionError("simulate: certificate networks of agent " + std::to_string(i) +
                                 " do not match the scenario dimensions");
    }
}

}  // namespace

MetricGeometry robot_geometry(const RobotScenarioParams& p) {
    MetricGeometry g;
    g.obstacle_centers = p.field.obstacle_centers;
    g.obstacle_radii = p.field.obstacle_radii;
    g.agent_radius = p.robot_radius;
    return g;
}

MetricGeometry platoon_geometry() {
    MetricGeometry g;
    g.spacing_states = true;
    return g;
}

double time_to_collision(double gap, double closing_speed) {
    if (!(closing_speed > 0.0)) return kInf;
    return std::max(gap, 0.0) / closing_speed;
}

std::vector<std::string> MetricsReport::columns() {
    return {"tracking_rmse", "average_ttc", "min_obstacle_distance", "min_agent_distance", "mean_speed",
            "safety_violations"};
}

std::vector<double> MetricsReport::row() const {
    return {tracking_rmse, average_ttc, min_obstacle_distance, min_agent_distance, mean_speed,
            static_cast<double>(safety_violations)};
}

json MetricsReport::to_json() const {
    json obs = json::array();
    for (double d : obstacle_distances) obs.push_back(number(d));
    return {{"tracking_rmse", number(tracking_rmse)},
            {"average_ttc", number(average_ttc)},
            {"min_obstacle_distance", number(min_obstacle_distance)},
            {"obstacle_distances", obs},
            {"min_agent_distance", number(min_agent_distance)},
            {"mean_speed", number(mean_speed)},
            {"safety_violations", safety_violations}};
}

std::string SimulationResult::trajectory_csv() const {
    std::ostringstream out;
    out.precision(10);
    if (states.empty()) return "";
    const int q = static_cast<int>(states[0].x.rows()), n = static_cast<int>(states[0].x.cols());
    int m = 0;
    for (const auto& c : controls)
        for (const auto& u : c) m = std::max(m, static_cast<int>(u.size()));
    out << "step,time,agent";
    for (int k = 0; k < n; ++k) out << ",x" << k;
    for (int k = 0; k < m; ++k) out << ",u" << k;
    out << '\n';
    for (std::size_t t = 0; t < states.size(); ++t)
        for (int i = 0; i < q; ++i) {
            out << t << ',' << states[t].time << ',' << i;
            for (int k = 0; k < n; ++k) out << ',' << states[t].x(i, k);
            for (int k = 0; k < m; ++k) {
                out << ',';
                if (t < controls.size() && k < controls[t][i].size()) out << controls[t][i][k];
            }
            out << '\n';
        }
    return out.str();
}

SimulationResult simulate(const Scenario& sc, const CoRwaCertificate* cert, const JointState& x0,
                          const MetricGeometry& geometry, int steps) {
    if (cert) check_dimensions(sc, *cert);
    if (x0.x.rows() != sc.q() || x0.x.cols() != sc.n()) throw DimensionError("simulate: initial state shape");
    if (steps < 0) steps = sc.steps;
    SimulationResult res;
    res.states.push_back(x0);
    for (int t = 0; t < steps; ++t) {
        const JointState& cur = res.states.back();
        std::vector<Vec> u(sc.q());
        for (int i = 0; i < sc.q(); ++i) u[i] = control_for(sc, cert, cur, i);
        StepResult step;
        try {
            step = euler_step(sc.model, sc.topo, cur, u, sc.dt);
        } catch (const IntegrationError& e) {
            throw IntegrationError(e.agent(), "step " + std::to_string(t) + ": non-finite state derivative");
        }
        for (int i = 0; i < sc.q(); ++i) {
            if (!step.next.x.row(i).allFinite())
                throw IntegrationError(i, "step " + std::to_string(t) + ": non-finite state");
            if (step.clipped[i]) res.clips.push_back({t, i});
            u[i] = clip_to(sc.model.control_bounds[i], u[i]);
        }
        res.controls.push_back(std::move(u));
        res.states.push_back(std::move(step.next));
    }
    res.metrics = compute_metrics(sc, res, geometry);
    return res;
}

MetricsReport compute_metrics(const Scenario& sc, const SimulationResult& sim, const MetricGeometry& g) {
    MetricsReport r;
    const int q = sc.q();
    const int steps = static_cast<int>(sim.states.size()) - 1;
    const auto& slice = sc.topo.position_slice;

    auto velocity = [&](int t, int i) -> Vec {
        const Mat& x = sim.states[t].x;
        if (g.spacing_states) return Vec::Constant(1, x(i, 1));
        return (position(sim.states[t + 1].x, sc.topo, i) - position(x, sc.topo, i)) / sc.dt;
    };
    auto desired = [&](int t, int i) -> Vec {
        const JointState& js = sim.states[t];
        if (g.spacing_states) return Vec::Constant(1, js.x(0, 1));
        if (!sc.nominal) return Vec::Zero(static_cast<int>(slice.size()));
        const ExtendedState e = extended_state(js, sc.topo, i);
        const Vec u = clip_to(sc.model.control_bounds[i], sc.nominal(js, i));
        const Vec d = sc.model.agents[i]->derivative(e.rows, e.valid_rows, u);
        Vec out(slice.size());
        for (std::size_t k = 0; k < slice.size(); ++k) out[k] = d[slice[k]];
        return out;
    };

    double sq = 0.0, speed = 0.0, ttc = 0.0;
    int tracked = 0, moving = 0, closing = 0;
    for (int t = 0; t < steps; ++t) {
        std::vector<Vec> v(q);
        for (int i = 0; i < q; ++i) {
            v[i] = velocity(t, i);
            speed += v[i].norm();
            ++moving;
            if (sc.is_exogenous(i)) continue;
            sq += (v[i] - desired(t, i)).squaredNorm();
            ++tracked;
        }
        const Mat& x = sim.states[t].x;
        if (g.spacing_states) {
            for (int i = 1; i < q; ++i) {
                const double c = time_to_collision(x(i, 0), x(i, 1) - x(i - 1, 1));
                if (std::isfinite(c)) {
                    ttc += c;
                    ++closing;
                }
            }
        } else {
            for (int i = 0; i < q; ++i)
                for (int j = i + 1; j < q; ++j) {
                    const Vec d = position(x, sc.topo, i) - position(x, sc.topo, j);
                    const double dist = d.norm();
                    if (dist == 0.0) continue;
                    const double rate = d.dot(v[i] - v[j]) / dist;
                    const double c = time_to_collision(dist - 2.0 * g.agent_radius, -rate);
                    if (std::isfinite(c)) {
                        ttc += c;
                        ++closing;
                    }
                }
        }
    }
    r.tracking_rmse = tracked ? std::sqrt(sq / tracked) : 0.0;
    r.mean_speed = moving ? speed / moving : 0.0;
    r.average_ttc = closing ? ttc / closing : std::numeric_limits<double>::quiet_NaN();

    r.min_agent_distance = kInf;
    r.obstacle_distances.assign(g.obstacle_centers.size(), kInf);
    for (const auto& js : sim.states) {
        const Mat& x = js.x;
        if (g.spacing_states) {
            for (int i = 1; i < q; ++i) r.min_agent_distance = std::min(r.min_agent_distance, std::max(0.0, x(i, 0)));
        } else {
            for (int i = 0; i < q; ++i)
                for (int j = i + 1; j < q; ++j)
                    r.min_agent_distance =
                        std::min(r.min_agent_distance,
                                 std::max(0.0, agent_distance(x, sc.topo, i, j) - 2.0 * g.agent_radius));
            for (std::size_t k = 0; k < g.obstacle_centers.size(); ++k)
                for (int i = 0; i < q; ++i) {
                    const double d =
                        (position(x, sc.topo, i) - g.obstacle_centers[k]).norm() - g.obstacle_radii[k] - g.agent_radius;
                    r.obstacle_distances[k] = std::min(r.obstacle_distances[k], std::max(0.0, d));
                }
        }
        for (int i = 0; i < q; ++i) {
            if (sc.is_exogenous(i) || sc.sets[i].unsafe.is_empty()) continue;
            const ExtendedState e = extended_state(js, sc.topo, i);
            if (sc.sets[i].unsafe.contains(e.flat(), sc.n(), e.valid_rows)) ++r.safety_violations;
        }
    }
    r.min_obstacle_distance = kInf;
    for (double d : r.obstacle_distances) r.min_obstacle_distance = std::min(r.min_obstacle_distance, d);
    return r;
}

}  // namespace corwa
