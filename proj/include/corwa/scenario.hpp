#pragma once

#include "corwa/dynamics.hpp"
#include "corwa/region.hpp"
#include "corwa/topology.hpp"

#include <functional>
#include <string>
#include <vector>

namespace corwa {

struct AgentSets {
    Region initial = Region::empty();
    Region goal = Region::empty();
    Region unsafe = Region::empty();
};

/// Nominal control of agent i at a joint state.
using NominalController = std::function<Vec(const JointState&, int)>;
/// Control of an exogenous agent (no certificate) at time t.
using ExogenousControl = std::function<Vec(double, int)>;

/// Everything about a multi-agent system that is not learned.
struct Scenario {
    std::string tag = "custom";
    SystemTopology topo;
    DynamicsModel model;
    std::vector<AgentSets> sets;
    std::vector<int> exogenous;  // 1: agent follows a schedule and carries no certificate
    std::vector<Vec> equilibrium;  // V_i vanishes here
    NominalController nominal;
    ExogenousControl exogenous_control;
    double dt = 0.1;  // simulation and training step
    int steps = 100;

    int q() const { return topo.q; }
    int n() const { return topo.state_dim; }
    bool is_exogenous(int i) const { return !exogenous.empty() && exogenous[i] != 0; }
    void validate() const;

    /// Control for agent i: the exogenous schedule or zero.
    Vec exogenous_at(double t, int i) const;
};

}  // namespace corwa
