#include "corwa/errors.hpp"
#include "corwa/experiment.hpp"
#include "corwa/report.hpp"
#include "corwa/simulate.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace corwa;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("corwa_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("time to collision") {
    CHECK(time_to_collision(20.0, 2.0) == 10.0);
    CHECK(std::isinf(time_to_collision(5.0, 0.0)));
    CHECK(std::isinf(time_to_collision(5.0, -1.0)));
    CHECK(time_to_collision(-1.0, 2.0) == 0.0);
}

TEST_CASE("nominal rollout of the scalar loop") {
    const Scenario sc = fixture::scalar_scenario();
    JointState x0{Mat::Zero(1, 1)};
    x0.x(0, 0) = 0.8;
    const auto res = simulate(sc, nullptr, x0, {}, 30);
    REQUIRE(res.states.size() == 31);
    for (int t = 0; t <= 30; ++t) CHECK(res.states[t].x(0, 0) == doctest::Approx(0.8 * std::pow(0.9, t)).epsilon(1e-12));
    CHECK(res.metrics.tracking_rmse < 1e-12);
    CHECK(std::isinf(res.metrics.min_obstacle_distance));
    CHECK(std::isnan(res.metrics.average_ttc));
    CHECK(res.metrics.safety_violations == 0);
    const auto j = res.metrics.to_json();
    CHECK(j.at("average_ttc").is_null());
    CHECK(MetricsReport::columns().size() == res.metrics.row().size());
}

TEST_CASE("the certificate controller drives the rollout") {
    const Scenario sc = fixture::scalar_scenario();
    auto cert = fixture::scalar_certificate(-1.0, 0.0);
    // pi(x) = 0.5 gives x+ = 0.9 x + 0.05
    cert.pi[0].net.layers()[0].bias[0] = 0.5;
    JointState x0{Mat::Zero(1, 1)};
    x0.x(0, 0) = -0.95;
    const auto res = simulate(sc, &cert, x0, {}, 3);
    double x = -0.95;
    for (int t = 1; t <= 3; ++t) {
        x = 0.9 * x + 0.05;
        CHECK(res.states[t].x(0, 0) == doctest::Approx(x).epsilon(1e-12));
    }
    // first state lies in the unsafe interval [-1, -0.9]
    CHECK(res.metrics.safety_violations == 1);
}

TEST_CASE("a diverging model reports the step") {
    Scenario sc = fixture::scalar_scenario();
    sc.model.agents[0] = std::make_shared<LinearDynamics>(Mat::Constant(1, 1, 1e200), Vec::Zero(1), Mat::Identity(1, 1));
    sc.model.state_domain[0] = Interval(Vec::Constant(1, -1e308), Vec::Constant(1, 1e308));
    JointState x0{Mat::Zero(1, 1)};
    x0.x(0, 0) = 1.0;
    try {
        simulate(sc, nullptr, x0, {}, 10);
        FAIL("expected an integration error");
    } catch (const IntegrationError& e) {
        CHECK(e.agent() == 0);
        CHECK(std::string(e.what()).find("step ") != std::string::npos);
    }
    JointState wrong{Mat::Zero(2, 1)};
    CHECK_THROWS_AS(simulate(sc, nullptr, wrong, {}, 1), DimensionError);
}

TEST_CASE("robot rollouts are deterministic and measure every obstacle") {
    const RobotScenarioParams params;
    const Scenario sc = robot_scenario(params);
    const MetricGeometry geo = robot_geometry(params);
    std::mt19937_64 rng(4);
    const JointState x0 = initial_state(sc, rng);
    const auto a = simulate(sc, nullptr, x0, geo, 200);
    const auto b = simulate(sc, nullptr, x0, geo, 200);
    for (std::size_t t = 0; t < a.states.size(); ++t) CHECK(a.states[t].x == b.states[t].x);

    REQUIRE(a.metrics.obstacle_distances.size() == 3);
    std::vector<double> oracle(3, std::numeric_limits<double>::infinity());
    double pair = std::numeric_limits<double>::infinity();
    for (const auto& s : a.states)
        for (int i = 0; i < sc.q(); ++i) {
            const Vec p = s.x.row(i).head(2).transpose();
            for (int k = 0; k < 3; ++k)
                oracle[k] = std::min(oracle[k], std::max(0.0, (p - geo.obstacle_centers[k]).norm() -
                                                                  geo.obstacle_radii[k] - geo.agent_radius));
            for (int j = i + 1; j < sc.q(); ++j)
                pair = std::min(pair, std::max(0.0, (p - s.x.row(j).head(2).transpose()).norm() - 2 * geo.agent_radius));
        }
    for (int k = 0; k < 3; ++k) CHECK(a.metrics.obstacle_distances[k] == doctest::Approx(oracle[k]).epsilon(1e-12));
    CHECK(a.metrics.min_obstacle_distance == doctest::Approx(*std::min_element(oracle.begin(), oracle.end())));
    CHECK(a.metrics.min_agent_distance == doctest::Approx(pair).epsilon(1e-12));
    CHECK(a.metrics.mean_speed > 0.0);
}

TEST_CASE("platoon tracking error against the leader speed") {
    const PlatoonScenarioParams params;
    const Scenario sc = platoon_scenario(params);
    std::mt19937_64 rng(2);
    const auto res = simulate(sc, nullptr, initial_state(sc, rng), platoon_geometry(), 100);
    double sq = 0.0;
    int count = 0;
    for (int t = 0; t < 100; ++t)
        for (int i = 1; i < sc.q(); ++i) {
            const double e = res.states[t].x(i, 1) - res.states[t].x(0, 1);
            sq += e * e;
            ++count;
        }
    CHECK(res.metrics.tracking_rmse == doctest::Approx(std::sqrt(sq / count)).epsilon(1e-9));
    CHECK(res.metrics.safety_violations == 0);
}

TEST_CASE("experiment config round trip and strict keys") {
    for (const char* name : {"double_integrator", "robot", "platoon"}) {
        ExperimentConfig c;
        c.scenario = name;
        c.apply_seed(9);
        const auto j = c.to_json();
        const auto back = ExperimentConfig::from_json(j);
        CHECK(back.to_json() == j);
        CHECK(back.cegis.training.seed == 9);
        CHECK(back.redver.seed == 9);
        CHECK(back.build().tag == c.build().tag);
    }
    ExperimentConfig c;
    auto j = c.to_json();
    j["extra"] = 1;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["schema_version"] = 2;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j.erase("schema_version");
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["cegis"]["verifier"] = c.cegis.verifier.to_json();
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["simulation"]["rollouts"] = 0;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), Error);

    ExperimentConfig robot;
    robot.scenario = "robot";
    CHECK_THROWS_AS(robot.family(), ConfigError);
    ExperimentConfig platoon;
    platoon.scenario = "platoon";
    CHECK(platoon.family()(5).q() == 6);
}

TEST_CASE("report needs every artifact") {
    const fs::path dir = scratch_dir("empty_report");
    try {
        render_report(dir.string());
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        for (const auto& f : required_artifacts()) CHECK(msg.find(f) != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("certificate grid") {
    const Scenario two = double_integrator_scenario({});
    auto cert = [&] {
        TrainingConfig cfg;
        cfg.v_hidden = {4};
        cfg.h_hidden = {4};
        cfg.pi_hidden = {4};
        cfg.pretrain_epochs = 0;
        return initialize_certificate(two, cfg);
    }();
    const ExperimentConfig defaults;
    const auto g = certificate_grid(cert, two, 0, 0, 1, defaults.report.grid, false);
    REQUIRE(g.xs.size() == 200);
    REQUIRE(g.ys.size() == 200);
    CHECK(g.values.rows() == 200);
    CHECK(g.values.cols() == 200);
    JointState js{Mat::Zero(two.q(), two.n())};
    for (int i = 0; i < two.q(); ++i) js.x.row(i) = two.equilibrium[i].transpose();
    js.x(0, 0) = g.xs[17];
    js.x(0, 1) = g.ys[40];
    CHECK(g.values(40, 17) == doctest::Approx(cert.V[0].value(js.x.row(0).transpose())).epsilon(1e-12));
    const std::string svg = heatmap_svg(g, "p", "v");
    CHECK(svg.rfind("<svg", 0) == 0);
}
