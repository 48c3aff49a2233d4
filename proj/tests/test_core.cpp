#include "corwa/certificate.hpp"
#include "corwa/errors.hpp"
#include "corwa/lipschitz.hpp"
#include "corwa/region.hpp"
#include "corwa/scenarios.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace corwa;

TEST_CASE("neighbor sets agree with sorting by distance then id") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const int q = 2 + trial % 6;
        const int m = 1 + trial % 4;
        auto topo = SystemTopology::all_to_all(q, 2, m, 1.0, {0, 1});
        JointState js{Mat::Zero(q, 2)};
        for (int i = 0; i < q; ++i) {
            // coarse lattice so distance ties happen
            js.x(i, 0) = 0.5 * std::uniform_int_distribution<int>(0, 3)(rng);
            js.x(i, 1) = 0.5 * std::uniform_int_distribution<int>(0, 3)(rng);
        }
        for (int i = 0; i < q; ++i) {
            std::vector<std::pair<double, int>> cand;
            for (int j = 0; j < q; ++j) {
                if (j == i) continue;
                const double d = std::hypot(js.x(i, 0) - js.x(j, 0), js.x(i, 1) - js.x(j, 1));
                if (d <= 1.0) cand.emplace_back(d, j);
            }
            std::sort(cand.begin(), cand.end());
            std::vector<int> expected;
            for (int k = 0; k < m - 1 && k < static_cast<int>(cand.size()); ++k) expected.push_back(cand[k].second);
            CHECK(neighbor_set(js, topo, i) == expected);

            const ExtendedState e = extended_state(js, topo, i);
            CHECK(e.valid_rows == 1 + static_cast<int>(expected.size()));
            CHECK(e.rows.rows() == m);
            CHECK(e.rows.row(0) == js.x.row(i));
            for (int k = 0; k < static_cast<int>(expected.size()); ++k) CHECK(e.rows.row(k + 1) == js.x.row(expected[k]));
            for (int k = e.valid_rows; k < m; ++k) CHECK(e.rows.row(k).isZero());
        }
    }
}

TEST_CASE("flatten is row-major and invertible") {
    Mat m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const Vec f = flatten(m);
    CHECK(f[1] == 2.0);
    CHECK(f[3] == 4.0);
    CHECK(unflatten(f, 2, 3) == m);
    CHECK_THROWS(unflatten(f, 4, 2));
}

TEST_CASE("region classification is consistent with membership") {
    std::mt19937_64 rng(2);
    const std::vector<int> slice{0, 1};
    const std::vector<Region> regions = {
        Region::box(make_vec({-0.5, -0.2}), make_vec({0.4, 0.9})),
        Region::disc(make_vec({0.3, -0.3}), 0.6, slice),
        Region::halfspace(make_vec({1.0, -2.0}), 0.3),
        Region::pairwise_distance(0.5, slice),
        Region::unite({Region::box(make_vec({-1, -1}), make_vec({0, 0})), Region::disc(make_vec({0.5, 0.5}), 0.3, slice)}),
        Region::complement(Region::disc(make_vec({0.0, 0.0}), 0.7, slice)),
    };
    for (const auto& r : regions) {
        const auto back = Region::from_json(r.to_json(), 2, slice);
        CHECK(back.to_json() == r.to_json());
        for (int trial = 0; trial < 300; ++trial) {
            const Vec lo = oracle::uniform_in(Vec::Constant(4, -1.0), Vec::Constant(4, 0.8), rng);
            const Vec hi = lo + oracle::uniform_in(Vec::Constant(4, 0.01), Vec::Constant(4, 0.5), rng);
            const Interval box(lo, hi);
            const int valid = 1 + trial % 2;
            const Containment c = r.classify(box, 2, valid);
            int in = 0;
            for (int s = 0; s < 30; ++s) {
                const Vec x = oracle::uniform_in(lo, hi, rng);
                const bool member = r.contains(x, 2, valid);
                CHECK(member == back.contains(x, 2, valid));
                in += member;
            }
            if (c == Containment::inside) CHECK(in == 30);
            if (c == Containment::outside) CHECK(in == 0);
        }
    }
    CHECK(!Region::empty().contains_state(make_vec({0.0, 0.0})));
    CHECK(Region::everything().contains_state(make_vec({0.0, 0.0})));
    const Interval dom(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
    const Interval bb = Region::disc(make_vec({0.8, 0.0}), 0.5, slice).bounding_box(dom);
    CHECK(bb.lower[0] == doctest::Approx(0.3));
    CHECK(bb.upper[0] == doctest::Approx(1.0));
}

TEST_CASE("distance range encloses sampled distances") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec alo = oracle::uniform_in(Vec::Constant(2, -2.0), Vec::Constant(2, 1.0), rng);
        const Vec blo = oracle::uniform_in(Vec::Constant(2, -2.0), Vec::Constant(2, 1.0), rng);
        const Interval a(alo, alo + oracle::uniform_in(Vec::Constant(2, 0.0), Vec::Constant(2, 1.0), rng));
        const Interval b(blo, blo + oracle::uniform_in(Vec::Constant(2, 0.0), Vec::Constant(2, 1.0), rng));
        const Range r = distance_range(a, b, {0, 1});
        for (int s = 0; s < 20; ++s) {
            const double d = (oracle::uniform_in(a.lower, a.upper, rng) - oracle::uniform_in(b.lower, b.upper, rng)).norm();
            CHECK(r.lo <= d + 1e-12);
            CHECK(d <= r.hi + 1e-12);
        }
    }
}

TEST_CASE("robot input matrix inverts the wheel geometry") {
    RobotParams p;
    RobotDynamics robot(p);
    const double c = std::cos(std::numbers::pi / 6), s = std::sin(std::numbers::pi / 6), L = p.wheel_offset;
    Mat j(3, 3);
    j << 0, c, -c, -1, s, s, L, L, L;
    CHECK((robot.wheel_geometry() - j).norm() < 1e-14);
    for (double heading : {0.0, 0.4, -2.5}) {
        const Mat g = robot_input_matrix(heading, p.wheel_radius, p.wheel_offset);
        Mat rot = Mat::Identity(3, 3);
        rot(0, 0) = std::cos(-heading);
        rot(0, 1) = -std::sin(-heading);
        rot(1, 0) = std::sin(-heading);
        rot(1, 1) = std::cos(-heading);
        // J^T Rot(-heading) g = r I
        CHECK((j.transpose() * rot * g - p.wheel_radius * Mat::Identity(3, 3)).norm() < 1e-12);
    }
}

TEST_CASE("platoon follower derivative") {
    const Scenario sc = platoon_scenario({});
    JointState js{Mat::Zero(sc.q(), 2)};
    js.x << 20, 20, 18, 21, 22, 19, 20, 20;
    const Vec d = platoon_derivative(js, 2, 0.7);
    CHECK(d[0] == doctest::Approx(21 - 19));
    CHECK(d[1] == doctest::Approx(0.7));
    PlatoonFollowerDynamics f;
    Mat xbar(2, 2);
    xbar << 22, 19, 18, 21;
    CHECK(f.derivative(xbar, 2, make_vec({0.7})) == d);
    // no predecessor: the gap is held
    CHECK(f.derivative(xbar, 1, make_vec({0.7}))[0] == 0.0);
}

TEST_CASE("euler step clips controls and flags them") {
    const Scenario sc = fixture::scalar_scenario();
    JointState js{Mat::Constant(1, 1, 0.5)};
    const StepResult r = euler_step(sc.model, sc.topo, js, {make_vec({3.0})}, 0.1);
    CHECK(r.next.x(0, 0) == doctest::Approx(0.5 + 0.1 * (-0.5 + 1.0)));
    CHECK(r.clipped == std::vector<int>{1});
    const StepResult ok = euler_step(sc.model, sc.topo, js, {make_vec({0.2})}, 0.1);
    CHECK(ok.clipped == std::vector<int>{0});
    CHECK(ok.next.time == doctest::Approx(0.1));
}

TEST_CASE("linear dynamics jacobian is exact") {
    Mat a(2, 2), b(2, 1);
    a << 0, 1, -2, -3;
    b << 0, 1;
    LinearDynamics lin(a, Vec::Zero(2), b);
    const auto jb = lin.jacobian_bounds(Interval(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)), 1,
                                        Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
    REQUIRE(jb);
    Mat expected(2, 3);
    expected << a, b;
    CHECK(jb->lower == expected);
    CHECK(jb->upper == expected);
}

TEST_CASE("metzler, hurwitz and the positive vector p") {
    Mat a(2, 2);
    a << -2, 1, 0.5, -1;
    CHECK(check_metzler(a));
    CHECK(check_hurwitz(a));
    Mat b = a;
    b(0, 1) = -0.1;
    CHECK(!check_metzler(b));
    Mat c(2, 2);
    c << -1, 2, 2, -1;  // eigenvalues 1 and -3
    CHECK(!check_hurwitz(c));
    CHECK(spectral_abscissa(c) == doctest::Approx(1.0));

    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const int q = 1 + trial % 5;
        Mat m = Mat::Zero(q, q);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j)
                if (i != j) m(i, j) = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
        for (int i = 0; i < q; ++i) m(i, i) = -(m.row(i).sum() + std::uniform_real_distribution<double>(0.1, 1.0)(rng));
        REQUIRE(check_hurwitz(m));
        const PositiveP pp = solve_positive_p(m);
        CHECK(pp.p.minCoeff() > 0.0);
        CHECK(pp.c.minCoeff() > 0.0);
        CHECK((m.transpose() * pp.p + pp.c).norm() < 1e-9);
    }
    CHECK(comparison_step(a, make_vec({1.0, 2.0}), 0.1) == make_vec({1.0 + 0.1 * 0.0, 2.0 + 0.1 * (-1.5)}));
}

TEST_CASE("continuous residuals on the scalar loop") {
    const Scenario sc = fixture::scalar_scenario();
    const auto cert = fixture::scalar_certificate(-0.5, 0.3);
    const DerivativeSource src{&sc, nullptr};
    for (double x : {-0.8, -0.1, 0.4, 1.0}) {
        JointState js{Mat::Constant(1, 1, x)};
        // V = x^2, x' = -x, h = x + 0.3
        CHECK(clf_residual(cert, src, js, 0) == doctest::Approx(-2 * x * x + 0.5 * x * x));
        CHECK(cbf_residual(cert, src, js, 0) == doctest::Approx(-x + (x + 0.3)));
        CHECK(clf_residual_discrete(cert, src, js, 0, 0.1) ==
              doctest::Approx(((0.9 * x) * (0.9 * x) - x * x) / 0.1 + 0.5 * x * x));
        CHECK(lyapunov_vector(cert, js)[0] == doctest::Approx(x * x));
        CHECK(scalar_lyapunov(cert, make_vec({2.0}), js) == doctest::Approx(2 * x * x));
    }
}

TEST_CASE("lipschitz margins") {
    CHECK(error_margin(0.1, 2.0, 3.0, 4.0, 5.0, 0.01) == doctest::Approx(0.5 * 0.1 * (2 * 3 + 4) * 5 + 2 * 0.01));
    CHECK(aggregate_rate({3.0, 4.0}) == doctest::Approx(5.0));
    CHECK_THROWS(aggregate_rate({-1.0}));
    auto topo = SystemTopology::all_to_all(4, 1, 3, 1.0, {0});
    // own rate plus the two largest others
    CHECK(aggregate_rate({1.0, 2.0, 5.0, 3.0}, topo, 0) == doctest::Approx(std::sqrt(1 + 25 + 9)));

    const Scenario sc = fixture::scalar_scenario();
    const auto cert = fixture::scalar_certificate(-1.0, 0.0);
    const LipschitzBudget b = compute_lipschitz_budget(sc, cert);
    REQUIRE(b.agents.size() == 1);
    // V = x^2 on [-1, 1], h = x, x' = -x
    CHECK(b.agents[0].LV >= 2.0 - 1e-9);
    CHECK(b.agents[0].Lh >= 1.0 - 1e-9);
    CHECK(b.agents[0].Lx >= 1.0 - 1e-9);
    CHECK(b.agents[0].Mx >= 1.0 - 1e-9);
    CHECK(b.agents[0].LV < 2.5);
    const ErrorMargins m = compute_margins(b, 0.1, {0.0});
    const auto& a = b.agents[0];
    CHECK(m.eV[0] == doctest::Approx(error_margin(0.1, a.LV, a.Lx, a.LVdot, a.Mbar, 0.0)));
}

TEST_CASE("margin on a worked example") {
    CHECK(error_margin(0.1, 2.0, 1.0, 1.0, 3.0, 0.01) == doctest::Approx(0.47));
    CHECK(error_margin(0.1, 2.0, 1.0, 1.0, 3.0, 0.02) - error_margin(0.1, 2.0, 1.0, 1.0, 3.0, 0.01) ==
          doctest::Approx(2.0 * 0.01));
}

TEST_CASE("euler truncation on x' = -x stays within half L M T^2") {
    for (double T : {0.1, 0.05, 0.01})
        for (int k = 0; k <= 200; ++k) {
            const double x = -1.0 + 0.01 * k;
            const double err = std::abs((x - T * x) - x * std::exp(-T));
            CHECK(err <= 0.5 * 1.0 * 1.0 * T * T + 1e-15);
        }
}

TEST_CASE("positive-definite form vanishes only at the shift") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        ScalarCertificate v;
        v.net = oracle::random_net({2, 6, 3}, Activation::tanh, rng);
        v.form = ScalarForm::positive_definite;
        v.shift = oracle::uniform_in(Vec::Constant(2, -0.5), Vec::Constant(2, 0.5), rng);
        v.scale = Vec::Constant(2, 2.0);
        v.delta = 1e-3;
        CHECK(v.value(v.shift) == 0.0);
        for (int s = 0; s < 100; ++s) {
            const Vec x = oracle::uniform_in(Vec::Constant(2, -3.0), Vec::Constant(2, 3.0), rng);
            if ((x - v.shift).norm() > 1e-6) CHECK(v.value(x) > 0.0);
        }
    }
}
