#pragma once

#include "corwa/certificate.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace corwa {

struct AgentLipschitz {
    double Lx = 0.0;     // closed-loop vector field w.r.t. the extended state
    double Mx = 0.0;     // bound on |x_i'|
    double Mbar = 0.0;   // aggregated over the neighborhood
    double LV = 0.0;
    double LVdot = 0.0;
    double Lh = 0.0;
    double Lhdot = 0.0;
};

struct LipschitzOptions {
    int samples = 400;          // joint states for sampled estimates
    double safety = 1.2;        // factor applied to every sampled estimate
    int boxes = 64;             // subdivisions for interval gradient bounds
    double fd_step = 1e-5;
    std::uint64_t seed = 0;
};

struct LipschitzBudget {
    std::vector<AgentLipschitz> agents;
    double safety = 1.2;
    std::vector<int> sampled_dynamics;  // 1 where Lx, Mx came from sampling

    nlohmann::json to_json() const;
};

/// sqrt of the sum of squares of the listed rates.
double aggregate_rate(const std::vector<double>& rates);
/// Worst case over admissible neighborhoods: own rate plus the M_i - 1
/// largest rates among communicable agents.
double aggregate_rate(const std::vector<double>& rates, const SystemTopology& topo, int i);

LipschitzBudget compute_lipschitz_budget(const Scenario& sc, const CoRwaCertificate& cert,
                                         const LipschitzOptions& opt = {});

struct ErrorMargins {
    std::vector<double> eV;
    std::vector<double> eh;
};

/// 0.5 T (L Lx + Ldot) Mbar + L eps_hat
double error_margin(double T, double L, double Lx, double Ldot, double Mbar, double eps_hat);
ErrorMargins compute_margins(const LipschitzBudget& budget, double T, const std::vector<double>& eps_hat);

}  // namespace corwa
