#include "corwa/lipschitz.hpp"

#include "corwa/errors.hpp"

#include <deque>
#include <random>
#include <set>

namespace corwa {

namespace {

std::vector<Interval> subdivide(const Interval& box, int count) {
    std::deque<Interval> queue{box};
    while (static_cast<int>(queue.size()) < count) {
        Interval b = queue.front();
        const int d = b.widest_dimension();
        if (!(b.width()[d] > 0.0)) break;
        queue.pop_front();
        auto [lo, hi] = b.bisect(d);
        queue.push_back(lo);
        queue.push_back(hi);
    }
    return {queue.begin(), queue.end()};
}

double gradient_norm_bound(const ScalarCertificate& c, const Interval& box, int boxes) {
    double best = 0.0;
    for (const auto& b : subdivide(box, boxes)) best = std::max(best, norm_upper(c.gradient_bounds(b)));
    if (c.form == ScalarForm::raw) best = std::min(best, c.net.lipschitz_upper() * c.scale.cwiseInverse().maxCoeff());
    return best;
}

double controller_lipschitz(const ControllerNet& pi, const Interval& box, int boxes) {
    double best = 0.0;
    for (const auto& b : subdivide(box, boxes)) best = std::max(best, norm_upper(pi.bounds_with_jacobian(b).second));
    return best;
}

double op_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

Vec sample_box(const Interval& box, std::mt19937_64& rng) {
    Vec x(box.size());
    for (int k = 0; k < box.size(); ++k)
        x[k] = box.upper[k] > box.lower[k] ? std::uniform_real_distribution<double>(box.lower[k], box.upper[k])(rng)
                                           : box.lower[k];
    return x;
}

struct DynamicsRates {
    double Jx = 0.0, Ju = 0.0, Mx = 0.0;
    bool sampled = false;
};

DynamicsRates dynamics_rates(const AgentDynamics& dyn, const SystemTopology& topo, int i,
                             const std::vector<Interval>& domains, const Interval& U, const LipschitzOptions& opt,
                             std::mt19937_64& rng) {
    const int n = topo.state_dim, rows = topo.M(i), m = dyn.control_dim(), w = rows * n;
    const Interval full = neighborhood_box(topo, i, domains);
    DynamicsRates r;
    if (dyn.affine()) {
        for (int valid = 1; valid <= rows; ++valid) {
            Interval xb = full;
            for (int k = valid * n; k < w; ++k) xb.set(k, {0.0, 0.0});
            const auto jac = dyn.jacobian_bounds(xb, valid, U);
            if (!jac) throw ConfigError("affine dynamics without a Jacobian");
            const Mat j = jac->upper;
            r.Jx = std::max(r.Jx, op_norm(j.leftCols(w)));
            r.Ju = std::max(r.Ju, op_norm(j.rightCols(m)));
            Interval arg(w + m);
            arg.set_segment(0, xb);
            arg.set_segment(w, U);
            const Vec f0 = dyn.derivative(Mat::Zero(rows, n), valid, Vec::Zero(m));
            r.Mx = std::max(r.Mx, norm_upper(add(multiply(j, arg), Interval::point(f0))));
        }
        return r;
    }
    r.sampled = true;
    for (int s = 0; s < opt.samples; ++s) {
        const int valid = std::uniform_int_distribution<int>(1, rows)(rng);
        Vec p = sample_box(full, rng);
        p.tail(w - valid * n).setZero();
        const Vec u = sample_box(U, rng);
        auto eval = [&](const Vec& pp, const Vec& uu) { return dyn.derivative(unflatten(pp, rows, n), valid, uu); };
        const Vec f = eval(p, u);
        r.Mx = std::max(r.Mx, f.norm());
        Mat jx(n, valid * n), ju(n, m);
        for (int c = 0; c < valid * n; ++c) {
            Vec a = p, b = p;
            a[c] += opt.fd_step;
            b[c] -= opt.fd_step;
            jx.col(c) = (eval(a, u) - eval(b, u)) / (2.0 * opt.fd_step);
        }
        for (int c = 0; c < m; ++c) {
            Vec a = u, b = u;
            a[c] += opt.fd_step;
            b[c] -= opt.fd_step;
            ju.col(c) = (eval(p, a) - eval(p, b)) / (2.0 * opt.fd_step);
        }
        r.Jx = std::max(r.Jx, op_norm(jx));
        r.Ju = std::max(r.Ju, op_norm(ju));
    }
    r.Jx *= opt.safety;
    r.Ju *= opt.safety;
    r.Mx *= opt.safety;
    return r;
}

/// Closed-loop derivative of every agent with neighbor lists held fixed.
Mat frozen_derivative(const CoRwaCertificate& cert, const Scenario& sc, const Mat& x,
                      const std::vector<std::vector<int>>& nbs) {
    Mat d(sc.q(), sc.n());
    for (int j = 0; j < sc.q(); ++j) {
        const ExtendedState e = extended_state(x, sc.topo, j, nbs[j]);
        const Vec u = cert.is_active(j) ? cert.pi[j].forward(e.flat())
                                        : clip_to(sc.model.control_bounds[j], sc.exogenous_at(0.0, j));
        d.row(j) = sc.model.agents[j]->derivative(e.rows, e.valid_rows, u).transpose();
    }
    return d;
}

std::set<int> two_hop(const SystemTopology& topo, int i) {
    std::set<int> out{i};
    for (int j : topo.communicable[i]) {
        out.insert(j);
        for (int k : topo.communicable[j]) out.insert(k);
    }
    return out;
}

}  // namespace

nlohmann::json LipschitzBudget::to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto& l = agents[i];
        a.push_back({{"Lx", l.Lx},
                     {"Mx", l.Mx},
                     {"Mbar", l.Mbar},
                     {"LV", l.LV},
                     {"LVdot", l.LVdot},
                     {"Lh", l.Lh},
                     {"Lhdot", l.Lhdot},
                     {"sampled_dynamics", i < sampled_dynamics.size() && sampled_dynamics[i] != 0}});
    }
    return {{"safety_factor", safety}, {"agents", a}};
}

double aggregate_rate(const std::vector<double>& rates) {
    double s = 0.0;
    for (double r : rates) {
        if (r < 0.0) throw std::invalid_argument("aggregate_rate: negative rate");
        s += r * r;
    }
    return std::sqrt(s);
}

double aggregate_rate(const std::vector<double>& rates, const SystemTopology& topo, int i) {
    std::vector<double> others;
    for (int j : topo.communicable[i]) others.push_back(rates[j]);
    std::sort(others.begin(), others.end(), std::greater<>());
    std::vector<double> group{rates[i]};
    for (int k = 0; k < topo.M(i) - 1 && k < static_cast<int>(others.size()); ++k) group.push_back(others[k]);
    return aggregate_rate(group);
}

LipschitzBudget compute_lipschitz_budget(const Scenario& sc, const CoRwaCertificate& cert,
                                         const LipschitzOptions& opt) {
    sc.validate();
    const int q = sc.q(), n = sc.n();
    const auto& domains = sc.model.state_domain;
    std::mt19937_64 rng(opt.seed);
    LipschitzBudget out;
    out.safety = opt.safety;
    out.agents.resize(q);
    out.sampled_dynamics.assign(q, 0);

    std::vector<double> Mx(q);
    for (int i = 0; i < q; ++i) {
        const auto r = dynamics_rates(*sc.model.agents[i], sc.topo, i, domains, sc.model.control_bounds[i], opt, rng);
        auto& a = out.agents[i];
        out.sampled_dynamics[i] = r.sampled ? 1 : 0;
        Mx[i] = a.Mx = r.Mx;
        if (!cert.is_active(i)) {
            a.Lx = r.Jx;
            continue;
        }
        const Interval box = neighborhood_box(sc.topo, i, domains);
        a.Lx = r.Jx + r.Ju * controller_lipschitz(cert.pi[i], box, opt.boxes);
        a.LV = gradient_norm_bound(cert.V[i], domains[i], opt.boxes);
        a.Lh = gradient_norm_bound(cert.h[i], box, opt.boxes);
    }
    for (int i = 0; i < q; ++i) out.agents[i].Mbar = aggregate_rate(Mx, sc.topo, i);

    // sampled rates of V_i' and h_i' along joint states, masks held at the base point
    std::vector<double> vdot(q, 0.0), hdot(q, 0.0);
    for (int s = 0; s < opt.samples; ++s) {
        Mat x(q, n);
        for (int j = 0; j < q; ++j) x.row(j) = sample_box(domains[j], rng).transpose();
        JointState joint{x, 0.0};
        std::vector<std::vector<int>> nbs(q);
        for (int j = 0; j < q; ++j) nbs[j] = neighbor_set(joint, sc.topo, j);
        for (int i = 0; i < q; ++i) {
            if (!cert.is_active(i)) continue;
            auto rates = [&](const Mat& xx) {
                const Mat d = frozen_derivative(cert, sc, xx, nbs);
                const double v = cert.V[i].gradient(xx.row(i).transpose()).dot(d.row(i).transpose());
                const Vec e = extended_state(xx, sc.topo, i, nbs[i]).flat();
                const double h = cert.h[i].gradient(e).dot(extended_state(d, sc.topo, i, nbs[i]).flat());
                return std::pair<double, double>{v, h};
            };
            double gv = 0.0, gh = 0.0;
            for (int j : two_hop(sc.topo, i))
                for (int c = 0; c < n; ++c) {
                    Mat a = x, b = x;
                    a(j, c) += opt.fd_step;
                    b(j, c) -= opt.fd_step;
                    const auto [va, ha] = rates(a);
                    const auto [vb, hb] = rates(b);
                    gv += std::pow((va - vb) / (2.0 * opt.fd_step), 2);
                    gh += std::pow((ha - hb) / (2.0 * opt.fd_step), 2);
                }
            vdot[i] = std::max(vdot[i], std::sqrt(gv));
            hdot[i] = std::max(hdot[i], std::sqrt(gh));
        }
    }
    for (int i = 0; i < q; ++i) {
        auto& a = out.agents[i];
        a.LVdot = opt.safety * vdot[i];
        // h_i' moves with second-hop agents too; rescale so that Lhdot * Mbar covers their rates
        std::vector<double> hop;
        for (int j : two_hop(sc.topo, i)) hop.push_back(Mx[j]);
        const double wide = aggregate_rate(hop);
        const double ratio = a.Mbar > 0.0 ? std::max(1.0, wide / a.Mbar) : 1.0;
        a.Lhdot = opt.safety * hdot[i] * ratio;
    }
    return out;
}

double error_margin(double T, double L, double Lx, double Ldot, double Mbar, double eps_hat) {
    for (double v : {T, L, Lx, Ldot, Mbar, eps_hat})
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("error_margin: inputs must be finite and nonnegative");
    return 0.5 * T * (L * Lx + Ldot) * Mbar + L * eps_hat;
}

ErrorMargins compute_margins(const LipschitzBudget& budget, double T, const std::vector<double>& eps_hat) {
    if (eps_hat.size() != budget.agents.size()) throw DimensionError("compute_margins: one eps_hat per agent");
    ErrorMargins m;
    for (std::size_t i = 0; i < budget.agents.size(); ++i) {
        const auto& a = budget.agents[i];
        m.eV.push_back(error_margin(T, a.LV, a.Lx, a.LVdot, a.Mbar, eps_hat[i]));
        m.eh.push_back(error_margin(T, a.Lh, a.Lx, a.Lhdot, a.Mbar, eps_hat[i]));
    }
    return m;
}

}  // namespace corwa
