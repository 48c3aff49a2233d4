#pragma once

#include "corwa/certificate.hpp"
#include "corwa/scenario.hpp"

#include <memory>

namespace fixture {

using namespace corwa;

/// Scalar system x' = -x + u with u in [-1, 1]; one agent.
inline Scenario scalar_scenario() {
    Scenario sc;
    sc.topo = SystemTopology::all_to_all(1, 1, 1, 1.0, {0});
    sc.model.agents.push_back(std::make_shared<LinearDynamics>(Mat::Constant(1, 1, -1.0), Vec::Zero(1), Mat::Identity(1, 1)));
    sc.model.control_bounds.push_back(Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
    sc.model.state_domain.push_back(Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
    sc.sets.push_back({Region::box(Vec::Constant(1, 0.5), Vec::Constant(1, 1.0)), Region::empty(),
                       Region::box(Vec::Constant(1, -1.0), Vec::Constant(1, -0.9))});
    sc.equilibrium.push_back(Vec::Zero(1));
    sc.nominal = [](const JointState&, int) { return Vec::Zero(1); };
    sc.dt = 0.1;
    return sc;
}

/// Hand-built certificate: V = x^2 (delta form, zero net), h = x + b, pi = 0.
inline CoRwaCertificate scalar_certificate(double lambda, double bias) {
    CoRwaCertificate c;
    c.active = {1};
    ScalarCertificate v;
    v.net = FeedForwardNet({DenseLayer{Mat::Zero(1, 1), Vec::Zero(1), Activation::identity}});
    v.shift = Vec::Zero(1);
    v.scale = Vec::Ones(1);
    v.form = ScalarForm::positive_definite;
    v.delta = 1.0;
    ScalarCertificate h;
    h.net = FeedForwardNet({DenseLayer{Mat::Ones(1, 1), Vec::Constant(1, bias), Activation::identity}});
    h.shift = Vec::Zero(1);
    h.scale = Vec::Ones(1);
    ControllerNet pi;
    pi.net = FeedForwardNet({DenseLayer{Mat::Zero(1, 1), Vec::Zero(1), Activation::identity}});
    pi.shift = Vec::Zero(1);
    pi.scale = Vec::Ones(1);
    pi.out_shift = Vec::Zero(1);
    pi.out_scale = Vec::Ones(1);
    pi.bounds = Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
    c.V = {v};
    c.h = {h};
    c.pi = {pi};
    c.Lambda = Mat::Constant(1, 1, lambda);
    c.Upsilon = Mat::Constant(1, 1, -1.0);
    c.eV = {0.0};
    c.eh = {0.0};
    return c;
}

}  // namespace fixture
