// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include "corwa/cegis.hpp"
#include "corwa/errors.hpp"
#include "corwa/experiment.hpp"
#include "corwa/lipschitz.hpp"
#include "corwa/simulate.hpp"
#include "corwa/transfer.hpp"
#include "corwa/verifier.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace corwa;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string config_path(const std::string& name) { return std::string(CORWA_SOURCE_DIR) + "/configs/" + name; }

struct Verdict {
    bool pass = false;
    std::string detail;
};

/// Random Metzler matrix made Hurwitz by strict row diagonal dominance.
Mat random_metzler_hurwitz(int q, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> off(0.0, 1.0), margin(0.05, 1.0);
    std::bernoulli_distribution sparse(0.3);
    Mat m = Mat::Zero(q, q);
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j)
            if (i != j && !sparse(rng)) m(i, j) = off(rng);
    for (int i = 0; i < q; ++i) m(i, i) = -(m.row(i).sum() + margin(rng));
    return m;
}

double brute_abscissa(const Mat& m) {
    Eigen::EigenSolver<Mat> es(m, false);
    return es.eigenvalues().real().maxCoeff();
}

// ---------------------------------------------------------------- 1

Verdict comparison_suite() {
    const auto t0 = clock_type::now();
    std::mt19937_64 rng(101);
    int positivity_violations = 0, decay_violations = 0, steps = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int q = 1 + trial % 8;
        const Mat m = random_metzler_hurwitz(q, rng);

        double diag = 0.0;
        for (int i = 0; i < q; ++i) diag = std::max(diag, std::abs(m(i, i)));
        const double T = 1.0 / diag;
        Vec z = oracle::uniform_in(Vec::Zero(q), Vec::Ones(q), rng);
        if (trial % 3 == 0) z[trial % q] = 0.0;
        for (int k = 0; k < 500; ++k) {
            z = comparison_step(m, z, T);
            if (z.minCoeff() < 0.0) ++positivity_violations;
        }

        const PositiveP pp = solve_positive_p(m);
        const double Td = 1e-3;
        Vec v = oracle::uniform_in(Vec::Zero(q), Vec::Ones(q), rng);
        for (int k = 0; k < 500; ++k) {
            const Vec cap = v + Td * (m * v);
            Vec next(q);
            for (int i = 0; i < q; ++i) next[i] = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * cap[i];
            if (k % 2 == 0) next = cap;
            const double vp = pp.p.dot(v), vn = pp.p.dot(next);
            if (vn > (1.0 - Td * pp.c_min) * vp * (1.0 + 1e-12) + 1e-300) ++decay_violations;
            v = next;
            ++steps;
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "200 matrices, positivity violations " << positivity_violations << ", decay violations " << decay_violations
      << " over " << steps << " steps, " << secs << " s (limit 10 s)";
    return {positivity_violations == 0 && decay_violations == 0 && secs < 10.0, d.str()};
}

// ---------------------------------------------------------------- 2

/// One agent, x' = A x + B u on [-1, 1]^2.
struct TinyInstance {
    Scenario sc;
    CoRwaCertificate cert;
    SurrogateModel surrogate;
};

ScalarCertificate tiny_scalar(std::mt19937_64& rng, ScalarForm form) {
    const int layers = std::uniform_int_distribution<int>(1, 2)(rng);
    std::vector<int> sizes{2};
    for (int l = 0; l < layers; ++l) sizes.push_back(std::uniform_int_distribution<int>(4, 8)(rng));
    sizes.push_back(form == ScalarForm::positive_definite ? 2 : 1);
    ScalarCertificate c;
    c.net = oracle::random_net(sizes, Activation::tanh, rng);
    c.form = form;
    c.shift = Vec::Zero(2);
    c.scale = Vec::Ones(2);
    c.delta = 1e-3;
    return c;
}

TinyInstance tiny_instance(std::mt19937_64& rng) {
    TinyInstance t;
    Scenario& sc = t.sc;
    sc.tag = "tiny";
    sc.topo = SystemTopology::all_to_all(1, 2, 1, 1.0, {0});
    Mat a(2, 2), b(2, 1);
    a << 0.0, 1.0, -1.0, -std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    b << 0.0, 1.0;
    sc.model.agents.push_back(std::make_shared<LinearDynamics>(a, Vec::Zero(2), b));
    sc.model.control_bounds.push_back(Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
    sc.model.state_domain.push_back(Interval(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)));
    sc.sets.push_back({Region::box(Vec::Constant(2, 0.4), Vec::Constant(2, 0.6)),
                       Region::box(Vec::Constant(2, -0.05), Vec::Constant(2, 0.05)),
                       Region::box(Vec::Constant(2, -0.9), Vec::Constant(2, -0.7))});
    sc.equilibrium.push_back(Vec::Zero(2));
    sc.nominal = [](const JointState&, int) { return Vec::Zero(1); };
    sc.dt = 0.01;

    CoRwaCertificate& c = t.cert;
    c.active = {1};
    c.V = {tiny_scalar(rng, ScalarForm::positive_definite)};
    c.h = {tiny_scalar(rng, ScalarForm::raw)};
    ControllerNet pi;
    pi.net = oracle::random_net({2, 4, 1}, Activation::tanh, rng);
    pi.shift = Vec::Zero(2);
    pi.scale = Vec::Ones(2);
    pi.out_shift = Vec::Zero(1);
    pi.out_scale = Vec::Ones(1);
    pi.bounds = sc.model.control_bounds[0];
    c.pi = {pi};
    c.Lambda = Mat::Constant(1, 1, -0.5);
    c.Upsilon = Mat::Constant(1, 1, -1.0);
    c.eV = {0.0};
    c.eh = {0.0};
    t.surrogate = fit_surrogates(sc.model, sc.topo, SurrogateConfig{});
    return t;
}

/// Independent evaluation of the certificate pieces from the raw weights.
double oracle_scalar(const ScalarCertificate& c, const Vec& x) {
    const Vec z = (x - c.shift).cwiseQuotient(c.scale);
    if (c.form == ScalarForm::raw) return oracle::naive_forward(c.net, z)[0];
    const Vec d = oracle::naive_forward(c.net, z) - oracle::naive_forward(c.net, Vec::Zero(z.size()));
    return d.squaredNorm() + c.delta * z.squaredNorm();
}

double oracle_control(const ControllerNet& pi, const Vec& x) {
    const Vec z = (x - pi.shift).cwiseQuotient(pi.scale);
    const double u = pi.out_shift[0] + pi.out_scale[0] * oracle::naive_forward(pi.net, z)[0];
    return std::clamp(u, pi.bounds.lower[0], pi.bounds.upper[0]);
}

/// Residual of the query's condition at x (true dynamics), nullopt where it does not apply.
std::optional<double> oracle_residual(const TinyInstance& t, const VerificationQuery& q, const Vec& x) {
    const auto& lin = static_cast<const LinearDynamics&>(*t.sc.model.agents[0]);
    const AgentSets& sets = t.sc.sets[0];
    switch (q.tag) {
        case ConditionTag::barrier_unsafe_negative:
            if (!sets.unsafe.contains_state(x)) return std::nullopt;
            return oracle_scalar(t.cert.h[0], x);
        case ConditionTag::barrier_safe_positive:
            if (!sets.initial.contains_state(x) && !sets.goal.contains_state(x)) return std::nullopt;
            return t.cert.slacks.eps0 - oracle_scalar(t.cert.h[0], x);
        case ConditionTag::lyap_decrement: {
            if (sets.goal.contains_state(x)) return std::nullopt;
            const Vec f = lin.a() * x + lin.b() * oracle_control(t.cert.pi[0], x);
            const double v0 = oracle_scalar(t.cert.V[0], x), v1 = oracle_scalar(t.cert.V[0], x + q.T * f);
            return (v1 - v0) / q.T - t.cert.Lambda(0, 0) * v0 + q.margin;
        }
        default: return std::nullopt;
    }
}

/// Grid maximum of the residual over the query box (step 5e-4).
double grid_max(const TinyInstance& t, const VerificationQuery& q) {
    double best = -std::numeric_limits<double>::infinity();
    const int steps = 200;
    for (int a = 0; a <= steps; ++a)
        for (int b = 0; b <= steps; ++b) {
            Vec x(2);
            x[0] = q.box.lower[0] + (q.box.upper[0] - q.box.lower[0]) * a / steps;
            x[1] = q.box.lower[1] + (q.box.upper[1] - q.box.lower[1]) * b / steps;
            if (auto r = oracle_residual(t, q, x)) best = std::max(best, *r);
        }
    return best;
}

Verdict verifier_soundness() {
    const auto t0 = clock_type::now();
    std::mt19937_64 rng(202);
    int instances = 0, agree = 0, verified = 0, spot_violations = 0, attempts = 0;
    std::uniform_real_distribution<double> mag(0.02, 0.2);
    while (instances < 50 && attempts < 1000) {
        ++attempts;
        TinyInstance t = tiny_instance(rng);
        VerificationQuery q;
        q.tag = std::array{ConditionTag::barrier_unsafe_negative, ConditionTag::barrier_safe_positive,
                           ConditionTag::lyap_decrement}[instances % 3];
        q.T = 0.01;
        q.budget.max_depth = 40;
        q.budget.max_boxes = 200000;
        if (q.tag == ConditionTag::barrier_unsafe_negative) {
            q.box = Interval(Vec::Constant(2, -0.9), Vec::Constant(2, -0.7));
        } else if (q.tag == ConditionTag::barrier_safe_positive) {
            q.box = Interval(Vec::Constant(2, 0.4), Vec::Constant(2, 0.6));
        } else {
            Vec lo;
            do {
                lo = oracle::uniform_in(Vec::Constant(2, -1.0), Vec::Constant(2, 0.9), rng);
            } while ((lo.array() < 0.05).all() && (lo.array() > -0.15).all());
            q.box = Interval(lo, lo + Vec::Constant(2, 0.1));
        }
        const double offset = (instances % 2 == 0 ? -1.0 : 1.0) * mag(rng);
        const double g = grid_max(t, q);
        // place the grid maximum of the residual at `offset`
        if (q.tag == ConditionTag::lyap_decrement) {
            q.margin = offset - g;
            if (q.margin < 0.0) continue;
        } else {
            auto& bias = t.cert.h[0].net.layers().back().bias[0];
            bias += q.tag == ConditionTag::barrier_unsafe_negative ? offset - g : g - offset;
        }
        ++instances;
        const VerifierContext ctx{&t.sc, &t.cert, &t.surrogate};
        const VerificationOutcome o = verify_box(q, ctx);
        const VerificationStatus expected = offset < 0 ? VerificationStatus::verified : VerificationStatus::counterexample;
        if (o.status == expected) ++agree;
        if (o.status != VerificationStatus::verified) continue;
        ++verified;
        for (int s = 0; s < 10000; ++s) {
            const Vec x = oracle::uniform_in(q.box.lower, q.box.upper, rng);
            if (auto r = oracle_residual(t, q, x); r && violates(q.tag, *r - 1e-9)) ++spot_violations;
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << agree << "/" << instances << " verdicts agree with the grid, " << verified << " verified boxes, "
      << spot_violations << " spot-check violations over " << verified * 10000 << " samples, " << secs
      << " s (limit 300 s)";
    return {instances == 50 && agree == 50 && spot_violations == 0 && secs < 300.0, d.str()};
}

// ---------------------------------------------------------------- 3

Verdict margin_validity() {
    // x' = -x on [-1, 1] with V = x^2: L_V = 2, L_x = 1, M_x = 1, L_Vdot = |d(-2x^2)/dx| = 4
    Scenario sc;
    sc.topo = SystemTopology::all_to_all(1, 1, 1, 1.0, {0});
    sc.model.agents.push_back(std::make_shared<LinearDynamics>(Mat::Constant(1, 1, -1.0), Vec::Zero(1), Mat::Identity(1, 1)));
    sc.model.control_bounds.push_back(Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
    sc.model.state_domain.push_back(Interval(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
    sc.sets.push_back({});
    sc.equilibrium.push_back(Vec::Zero(1));
    sc.nominal = [](const JointState&, int) { return Vec::Zero(1); };
    CoRwaCertificate cert;
    cert.active = {1};
    ScalarCertificate v;
    v.net = FeedForwardNet({DenseLayer{Mat::Zero(1, 1), Vec::Zero(1), Activation::identity}});
    v.form = ScalarForm::positive_definite;
    v.delta = 1.0;
    v.shift = Vec::Zero(1);
    v.scale = Vec::Ones(1);
    ScalarCertificate h = v;
    h.form = ScalarForm::raw;
    ControllerNet pi;
    pi.net = FeedForwardNet({DenseLayer{Mat::Zero(1, 1), Vec::Zero(1), Activation::identity}});
    pi.shift = pi.scale = pi.out_scale = Vec::Ones(1);
    pi.shift = Vec::Zero(1);
    pi.out_shift = Vec::Zero(1);
    pi.bounds = sc.model.control_bounds[0];
    cert.V = {v};
    cert.h = {h};
    cert.pi = {pi};
    cert.Lambda = Mat::Constant(1, 1, -1.0);
    cert.Upsilon = Mat::Constant(1, 1, -1.0);
    cert.eV = cert.eh = {0.0};

    LipschitzBudget analytic;
    AgentLipschitz a;
    a.LV = 2.0;
    a.Lx = 1.0;
    a.Mx = a.Mbar = 1.0;
    a.LVdot = 4.0;
    analytic.agents = {a};
    const LipschitzBudget estimated = compute_lipschitz_budget(sc, cert);

    std::mt19937_64 rng(303);
    int violations = 0;
    double worst_ratio = 0.0;
    const DerivativeSource src{&sc, nullptr};
    for (double T : {0.1, 0.01}) {
        const double e_analytic = compute_margins(analytic, T, {0.0}).eV[0];
        const double e_est = compute_margins(estimated, T, {0.0}).eV[0];
        for (int s = 0; s < 10000; ++s) {
            JointState js{Mat::Constant(1, 1, std::uniform_real_distribution<double>(-1.0, 1.0)(rng))};
            const double lam = cert.Lambda(0, 0) * cert.V[0].value(js.x.row(0).transpose());
            const double disc = clf_residual_discrete(cert, src, js, 0, T) + lam;
            const double cont = clf_residual(cert, src, js, 0) + lam;
            const double gap = std::abs(disc - cont);
            if (gap > e_analytic || gap > e_est) ++violations;
            worst_ratio = std::max(worst_ratio, gap / e_analytic);
        }
    }
    std::ostringstream d;
    d << "T in {0.1, 0.01}, 2x10^4 states, " << violations << " gaps above e^V (worst gap/e^V = " << worst_ratio
      << ", estimated L_V " << estimated.agents[0].LV << ", L_Vdot " << estimated.agents[0].LVdot << ")";
    return {violations == 0, d.str()};
}

// ---------------------------------------------------------------- 4

struct PipelineResult {
    CoRwaCertificate cert;
    CegisReport report;
    Scenario scenario;
};

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
    PipelineResult r;
    r.scenario = cfg.build();
    Dataset data = sample_dataset(r.scenario, cfg.cegis.training);
    r.cert = initialize_certificate(r.scenario, cfg.cegis.training, &data);
    const SurrogateModel sur = fit_surrogates(r.scenario.model, r.scenario.topo, cfg.cegis.surrogate);
    r.report = run_cegis(r.scenario, r.cert, data, sur, cfg.cegis);
    return r;
}

Verdict cegis_convergence() {
    int converged = 0;
    bool within_time = true;
    std::ostringstream d;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ExperimentConfig cfg = ExperimentConfig::load(config_path("double_integrator.json"));
        cfg.apply_seed(seed);
        cfg.cegis.max_iterations = 100;
        cfg.cegis.max_seconds = 1800.0;
        const auto t0 = clock_type::now();
        const PipelineResult r = run_pipeline(cfg);
        const double secs = seconds_since(t0);
        const bool ok = r.report.status == CegisStatus::certified_converged;
        converged += ok;
        within_time = within_time && (!ok || secs < 1800.0);
        d << "seed " << seed << ": " << to_string(r.report.status) << " after " << r.report.iterations
          << " rounds, " << static_cast<int>(secs) << " s; ";
        std::cout << "  AC4 " << d.str().substr(d.str().rfind("seed ")) << std::endl;
    }
    d << converged << "/5 converged (need 3)";
    return {converged >= 3 && within_time, d.str()};
}

// ---------------------------------------------------------------- 5, 6

struct RobotOutcome {
    Verdict safety, decay;
};

RobotOutcome robot_invariance(double cegis_seconds) {
    ExperimentConfig cfg = ExperimentConfig::load(config_path("robot.json"));
    cfg.cegis.max_seconds = cegis_seconds;
    const auto t0 = clock_type::now();
    const PipelineResult r = run_pipeline(cfg);
    const double secs = seconds_since(t0);
    const bool certified = r.report.status == CegisStatus::certified_converged;
    const auto& last = r.report.records.back();

    // rollouts with whatever certificate the loop produced
    const Scenario& sc = r.scenario;
    const MetricGeometry geo = cfg.geometry();
    const PositiveP pp = solve_positive_p(r.cert.Lambda);
    double min_obstacle = std::numeric_limits<double>::infinity(), min_agent = min_obstacle;
    int decay_violations = 0, samples = 0, rollouts = 0;
    std::string failure;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        try {
            const SimulationResult sim = simulate(sc, &r.cert, initial_state(sc, rng), geo, 600);
            ++rollouts;
            min_obstacle = std::min(min_obstacle, sim.metrics.min_obstacle_distance);
            min_agent = std::min(min_agent, sim.metrics.min_agent_distance);
            const double v0 = pp.p.dot(lyapunov_vector(r.cert, sim.states[0]));
            for (std::size_t k = 0; k < sim.states.size(); ++k) {
                const double vp = pp.p.dot(lyapunov_vector(r.cert, sim.states[k]));
                if (vp > 1.05 * v0 * std::exp(-pp.c_min * sim.states[k].time)) ++decay_violations;
                ++samples;
            }
        } catch (const Error& e) {
            failure = e.what();
        }
    }
    std::ostringstream head;
    head << "CEGIS " << to_string(r.report.status) << " after " << r.report.iterations << " rounds, "
         << static_cast<int>(secs) << " s, last pass " << last.verified << "/" << last.queries
         << " queries verified";
    if (r.report.timed_out) head << " (wall-clock cap " << cegis_seconds << " s)";

    std::ostringstream safety;
    safety << head.str() << "; " << rollouts << "/10 rollouts, min obstacle distance " << min_obstacle
           << ", min agent distance " << min_agent;
    if (!failure.empty()) safety << ", rollout error: " << failure;
    std::ostringstream decay;
    decay << head.str() << "; c_min " << pp.c_min << ", " << decay_violations << "/" << samples
          << " samples above 1.05 V_p(0) e^(-c_min t)";

    const bool safe = rollouts == 10 && min_obstacle > 0.0 && min_agent > 0.0;
    return {{certified && safe, safety.str()}, {certified && rollouts == 10 && decay_violations == 0, decay.str()}};
}

// ---------------------------------------------------------------- 7

Verdict redver_shape() {
    ExperimentConfig cfg = ExperimentConfig::load(config_path("platoon.json"));
    TrainingConfig& tc = cfg.cegis.training;
    tc.dataset_size = 3000;
    tc.epochs = 5;
    tc.pretrain_epochs = 10;
    tc.v_hidden = {8};
    tc.h_hidden = {8};
    tc.pi_hidden = {8};
    cfg.cegis.max_iterations = 2;
    cfg.cegis.max_seconds = 600.0;
    cfg.redver.sizes = {3, 6, 30};
    cfg.redver.cegis = cfg.cegis;

    int train_calls = 0;
    RedVerHooks hooks;
    hooks.train = [&](const Scenario& sc, CoRwaCertificate& cert, Dataset& data, const SurrogateModel& sur) {
        ++train_calls;
        return run_cegis(sc, cert, data, sur, cfg.cegis);
    };
    const RedVerReport rep = red_ver(cfg.family(), cfg.redver, hooks);

    std::ostringstream d;
    d << "training calls " << train_calls << "; ";
    bool linear = true, preserved = true;
    const double base = std::max(1e-3, rep.rows.front().transfer_seconds + rep.rows.front().spot_seconds);
    for (const auto& row : rep.rows) {
        const double t = row.transfer_seconds + row.spot_seconds;
        const double allowed = 1.5 * base * row.size / rep.rows.front().size;
        linear = linear && t <= allowed;
        preserved = preserved && row.max_residual_gap <= 1e-9;
        d << "N=" << row.size << ": transfer " << row.transfer_seconds << " s + spot " << row.spot_seconds
          << " s (limit " << allowed << "), gap " << row.max_residual_gap << "; ";
    }
    return {train_calls == 1 && rep.training_runs == 1 && rep.rows.size() == 3 && linear && preserved, d.str()};
}

// ---------------------------------------------------------------- 8

Verdict numerical_kernels() {
    const auto t0 = clock_type::now();
    std::mt19937_64 rng(808);
    double worst_grad = 0.0;
    int ibp_violations = 0, euler_violations = 0, closure_violations = 0, submatrices = 0;

    for (int trial = 0; trial < 100; ++trial) {
        const int in = 1 + trial % 4;
        std::vector<int> sizes{in};
        const int layers = 1 + trial % 3;
        for (int l = 0; l < layers; ++l) sizes.push_back(2 + (trial + l) % 7);
        sizes.push_back(1 + trial % 2);
        const Activation act = trial % 3 == 0 ? Activation::tanh : trial % 3 == 1 ? Activation::softplus
                                                                                   : Activation::relu;
        const FeedForwardNet net = oracle::random_net(sizes, act, rng);

        const Vec x = oracle::uniform_in(Vec::Constant(in, -1.0), Vec::Constant(in, 1.0), rng);
        if (act != Activation::relu) {
            const Mat g = net.input_gradient(x);
            const Mat fd = oracle::fd_jacobian([&](const Vec& y) { return oracle::naive_forward(net, y); }, x);
            worst_grad = std::max(worst_grad, (g - fd).norm() / std::max(1.0, fd.norm()));
        }

        const Vec lo = oracle::uniform_in(Vec::Constant(in, -1.0), Vec::Constant(in, 0.5), rng);
        const Vec hi = lo + oracle::uniform_in(Vec::Constant(in, 0.0), Vec::Constant(in, 0.5), rng);
        const Interval out = net.interval_bounds(Interval(lo, hi));
        for (int s = 0; s < 10000; ++s) {
            const Vec y = oracle::naive_forward(net, oracle::uniform_in(lo, hi, rng));
            for (int k = 0; k < y.size(); ++k)
                if (y[k] < out.lower[k] || y[k] > out.upper[k]) ++ibp_violations;
        }
    }

    for (double T : {0.1, 0.05, 0.01})
        for (int k = 0; k <= 10000; ++k) {
            const double x = -1.0 + 2e-4 * k;
            if (std::abs((x - T * x) - x * std::exp(-T)) > 0.5 * T * T + 1e-15) ++euler_violations;
        }

    for (int trial = 0; trial < 200; ++trial) {
        const int q = 2 + trial % 7;
        const Mat m = random_metzler_hurwitz(q, rng);
        for (unsigned mask = 1; mask < (1u << q); ++mask) {
            std::vector<int> idx;
            for (int i = 0; i < q; ++i)
                if (mask & (1u << i)) idx.push_back(i);
            Mat sub(idx.size(), idx.size());
            for (std::size_t a = 0; a < idx.size(); ++a)
                for (std::size_t b = 0; b < idx.size(); ++b) sub(a, b) = m(idx[a], idx[b]);
            ++submatrices;
            if (!check_metzler(sub) || !check_hurwitz(sub) || brute_abscissa(sub) >= 0.0) ++closure_violations;
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "worst gradient rel. error " << worst_grad << " (limit 1e-4), IBP violations " << ibp_violations
      << " over 10^6 samples, Euler violations " << euler_violations << ", submatrix violations " << closure_violations
      << "/" << submatrices << ", " << secs << " s (limit 60 s)";
    return {worst_grad <= 1e-4 && ibp_violations == 0 && euler_violations == 0 && closure_violations == 0 &&
                secs < 60.0,
            d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    double robot_seconds = 1800.0;
    for (int k = 1; k < argc; ++k) {
        const std::string a = argv[k];
        if (a.rfind("--robot-seconds=", 0) == 0) robot_seconds = std::stod(a.substr(16));
        else wanted.insert(std::stoi(a));
    }
    auto enabled = [&](int id) { return wanted.empty() || wanted.count(id); };
    int failures = 0;
    auto print = [&](int id, const Verdict& v) {
        std::cout << "AC" << id << " " << (v.pass ? "PASS" : "FAIL") << ": " << v.detail << std::endl;
        failures += !v.pass;
    };
    auto guarded = [&](int id, auto&& fn) {
        try {
            print(id, fn());
        } catch (const std::exception& e) {
            print(id, {false, std::string("error: ") + e.what()});
        }
    };

    if (enabled(1)) guarded(1, comparison_suite);
    if (enabled(2)) guarded(2, verifier_soundness);
    if (enabled(3)) guarded(3, margin_validity);
    if (enabled(4)) guarded(4, cegis_convergence);
    if (enabled(5) || enabled(6)) {
        try {
            const RobotOutcome r = robot_invariance(robot_seconds);
            if (enabled(5)) print(5, r.safety);
            if (enabled(6)) print(6, r.decay);
        } catch (const std::exception& e) {
            if (enabled(5)) print(5, {false, std::string("error: ") + e.what()});
            if (enabled(6)) print(6, {false, std::string("error: ") + e.what()});
        }
    }
    if (enabled(7)) guarded(7, redver_shape);
    if (enabled(8)) guarded(8, numerical_kernels);
    return failures == 0 ? 0 : 1;
}
