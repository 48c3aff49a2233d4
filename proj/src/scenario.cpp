#include "corwa/scenario.hpp"

#include "corwa/errors.hpp"

namespace corwa {

void Scenario::validate() const {
    topo.validate();
    model.validate(topo);
    if (static_cast<int>(sets.size()) != q()) throw ConfigError("scenario: one set declaration per agent");
    if (!exogenous.empty() && static_cast<int>(exogenous.size()) != q())
        throw ConfigError("scenario: exogenous flags need one entry per agent");
    if (static_cast<int>(equilibrium.size()) != q()) throw ConfigError("scenario: one equilibrium per agent");
    for (const auto& e : equilibrium)
        if (e.size() != n()) throw ConfigError("scenario: equilibrium must have state dimension");
    if (!(dt > 0.0)) throw ConfigError("scenario: dt must be positive");
    if (steps < 1) throw ConfigError("scenario: steps must be positive");
}

Vec Scenario::exogenous_at(double t, int i) const {
    if (exogenous_control) return exogenous_control(t, i);
    return Vec::Zero(model.agents[i]->control_dim());
}

}  // namespace corwa
