#include "corwa/dynamics.hpp"

#include "corwa/errors.hpp"
#include "corwa/optim.hpp"

#include <algorithm>
#include <numbers>

namespace corwa {

Vec AgentDynamics::derivative(const Mat& xbar, int valid_rows, const Vec& u) const {
    Vec d = drift(xbar, valid_rows);
    if (control_dim() > 0) d += input_matrix(xbar, valid_rows) * u;
    return d;
}

// ---------------------------------------------------------------- linear

LinearDynamics::LinearDynamics(Mat a, Vec c, Mat b, std::string tag)
    : a_(std::move(a)), c_(std::move(c)), b_(std::move(b)), tag_(std::move(tag)) {
    if (c_.size() != a_.rows() || b_.rows() != a_.rows())
        throw DimensionError("linear dynamics: A, c, B row counts differ");
    if (a_.cols() < a_.rows()) throw DimensionError("linear dynamics: A must cover at least the own state");
    if (a_.cols() % a_.rows() != 0) throw DimensionError("linear dynamics: A columns must be whole rows");
}

Vec LinearDynamics::drift(const Mat& xbar, int /*valid_rows*/) const {
    const Vec flat = flatten(xbar);
    if (flat.size() < a_.cols()) throw DimensionError("linear dynamics: extended state too small");
    return a_ * flat.head(a_.cols()) + c_;
}

Mat LinearDynamics::input_matrix(const Mat& /*xbar*/, int /*valid_rows*/) const { return b_; }

nlohmann::json LinearDynamics::params() const {
    auto rows = [](const Mat& m) {
        std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
        return out;
    };
    return {{"A", rows(a_)}, {"B", rows(b_)}, {"c", std::vector<double>(c_.data(), c_.data() + c_.size())}};
}

std::optional<IntervalMatrix> LinearDynamics::jacobian_bounds(const Interval& xbar, int /*valid_rows*/,
                                                              const Interval& u) const {
    const int n = state_dim();
    Mat j = Mat::Zero(n, xbar.size() + u.size());
    j.leftCols(a_.cols()) = a_;
    j.rightCols(b_.cols()) = b_;
    return IntervalMatrix::point(j);
}

// ---------------------------------------------------------------- robot

Mat robot_wheel_geometry(double wheel_offset) {
    const double c = std::cos(std::numbers::pi / 6.0), s = std::sin(std::numbers::pi / 6.0);
    Mat j(3, 3);
    j << 0.0, c, -c,
        -1.0, s, s,
        wheel_offset, wheel_offset, wheel_offset;
    return j;
}

Mat robot_input_matrix(double heading, double wheel_radius, double wheel_offset) {
    if (!(wheel_offset > 0.0)) throw ConfigError("robot: wheel offset must be positive");
    Mat rot = Mat::Identity(3, 3);
    rot(0, 0) = std::cos(heading);
    rot(0, 1) = -std::sin(heading);
    rot(1, 0) = std::sin(heading);
    rot(1, 1) = std::cos(heading);
    const Mat jt_inv = robot_wheel_geometry(wheel_offset).transpose().inverse();
    return rot * jt_inv * wheel_radius;
}

RobotDynamics::RobotDynamics(RobotParams p) : p_(p) {
    if (!(p_.wheel_offset > 0.0)) throw ConfigError("robot: wheel offset must be positive");
    if (!(p_.eps > 0.0)) throw ConfigError("robot: interaction offset must be positive");
    body_map_ = robot_wheel_geometry(p_.wheel_offset).transpose().inverse() * p_.wheel_radius;
}

Mat RobotDynamics::wheel_geometry() const { return robot_wheel_geometry(p_.wheel_offset); }

Vec RobotDynamics::drift(const Mat& xbar, int valid_rows) const {
    Vec f = Vec::Zero(3);
    for (int k = 1; k < valid_rows; ++k) {
        const double dx = xbar(0, 0) - xbar(k, 0), dy = xbar(0, 1) - xbar(k, 1);
        const double w = p_.k / (std::hypot(dx, dy) + p_.eps);
        f[0] += w * dx;
        f[1] += w * dy;
    }
    return f;
}

Mat RobotDynamics::input_matrix(const Mat& xbar, int /*valid_rows*/) const {
    const double th = xbar(0, 2);
    Mat rot = Mat::Identity(3, 3);
    rot(0, 0) = std::cos(th);
    rot(0, 1) = -std::sin(th);
    rot(1, 0) = std::sin(th);
    rot(1, 1) = std::cos(th);
    return rot * body_map_;
}

nlohmann::json RobotDynamics::params() const {
    return {{"k", p_.k}, {"eps", p_.eps}, {"wheel_radius", p_.wheel_radius}, {"wheel_offset", p_.wheel_offset}};
}

Vec robot_drift(const JointState& joint, const SystemTopology& topo, int i, double k, double eps) {
    const ExtendedState e = extended_state(joint, topo, i);
    RobotParams p;
    p.k = k;
    p.eps = eps;
    return RobotDynamics(p).drift(e.rows, e.valid_rows);
}

// ---------------------------------------------------------------- platoon

Vec PlatoonFollowerDynamics::drift(const Mat& xbar, int valid_rows) const {
    Vec f = Vec::Zero(2);
    // without a visible predecessor the gap is held
    if (valid_rows >= 2) f[0] = xbar(1, 1) - xbar(0, 1);
    return f;
}

Mat PlatoonFollowerDynamics::input_matrix(const Mat&, int) const {
    Mat g = Mat::Zero(2, 1);
    g(1, 0) = 1.0;
    return g;
}

std::optional<IntervalMatrix> PlatoonFollowerDynamics::jacobian_bounds(const Interval& xbar, int valid_rows,
                                                                       const Interval& u) const {
    Mat j = Mat::Zero(2, xbar.size() + u.size());
    if (valid_rows >= 2) {
        j(0, 1) = -1.0;
        j(0, 3) = 1.0;
    }
    j(1, xbar.size()) = 1.0;
    return IntervalMatrix::point(j);
}

Vec PlatoonLeaderDynamics::drift(const Mat&, int) const { return Vec::Zero(2); }

Mat PlatoonLeaderDynamics::input_matrix(const Mat&, int) const {
    Mat g = Mat::Zero(2, 1);
    g(1, 0) = 1.0;
    return g;
}

std::optional<IntervalMatrix> PlatoonLeaderDynamics::jacobian_bounds(const Interval& xbar, int,
                                                                     const Interval& u) const {
    Mat j = Mat::Zero(2, xbar.size() + u.size());
    j(1, xbar.size()) = 1.0;
    return IntervalMatrix::point(j);
}

Vec platoon_derivative(const JointState& joint, int i, double u) {
    if (i < 1 || i >= joint.x.rows()) throw std::invalid_argument("platoon: follower id out of range");
    Vec d(2);
    d << joint.x(i - 1, 1) - joint.x(i, 1), u;
    return d;
}

// ---------------------------------------------------------------- model

void DynamicsModel::validate(const SystemTopology& topo) const {
    if (q() != topo.q) throw ConfigError("dynamics: agent count differs from topology");
    if (static_cast<int>(control_bounds.size()) != q() || static_cast<int>(state_domain.size()) != q())
        throw ConfigError("dynamics: control bounds and domains need one entry per agent");
    for (int i = 0; i < q(); ++i) {
        if (!agents[i]) throw ConfigError("dynamics: missing model for agent " + std::to_string(i));
        if (agents[i]->state_dim() != topo.state_dim)
            throw DimensionError("dynamics: state dimension differs from topology");
        if (control_bounds[i].size() != agents[i]->control_dim() || !control_bounds[i].valid())
            throw ConfigError("dynamics: control bounds must be a nonempty box of control dimension");
        if (state_domain[i].size() != topo.state_dim || !state_domain[i].valid())
            throw ConfigError("dynamics: state domain must be a box of state dimension");
        if (!state_domain[i].lower.allFinite() || !state_domain[i].upper.allFinite())
            throw ConfigError("dynamics: unbounded state domain");
    }
}

Vec clip_to(const Interval& box, const Vec& u, bool* clipped) {
    Vec out = u.cwiseMax(box.lower).cwiseMin(box.upper);
    if (clipped) *clipped = (out.array() != u.array()).any();
    return out;
}

StepResult euler_step(const DynamicsModel& model, const SystemTopology& topo, const JointState& joint,
                      const std::vector<Vec>& controls, double T) {
    if (!(T > 0.0)) throw std::invalid_argument("euler_step: T must be positive");
    if (static_cast<int>(controls.size()) != model.q()) throw DimensionError("euler_step: one control per agent");
    StepResult res;
    res.next.x = joint.x;
    res.next.time = joint.time + T;
    res.clipped.assign(model.q(), 0);
    for (int i = 0; i < model.q(); ++i) {
        const ExtendedState e = extended_state(joint, topo, i);
        bool clipped = false;
        const Vec u = clip_to(model.control_bounds[i], controls[i], &clipped);
        res.clipped[i] = clipped ? 1 : 0;
        const Vec d = model.agents[i]->derivative(e.rows, e.valid_rows, u);
        if (!d.allFinite()) throw IntegrationError(i, "non-finite state derivative");
        res.next.x.row(i) += T * d.transpose();
    }
    return res;
}

double norm_upper(const IntervalMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    return spectral_norm(m.magnitude());
}

Interval extended_domain(const SystemTopology& topo, int i, const std::vector<Interval>& domains,
                         const std::vector<int>& neighbors) {
    const int n = topo.state_dim;
    Interval box(topo.extended_dim(i));
    box.set_segment(0, domains[i]);
    for (std::size_t k = 0; k < neighbors.size(); ++k) box.set_segment(static_cast<int>(k + 1) * n, domains[neighbors[k]]);
    return box;
}

Interval neighborhood_box(const SystemTopology& topo, int i, const std::vector<Interval>& domains) {
    const int n = topo.state_dim;
    Interval others = Interval::point(Vec::Zero(n));
    for (int j : topo.communicable[i]) others = others.hull(domains[j]);
    Interval box(topo.extended_dim(i));
    box.set_segment(0, domains[i]);
    for (int k = 1; k < topo.M(i); ++k) box.set_segment(k * n, others);
    return box;
}

// ---------------------------------------------------------------- surrogate

Vec AgentSurrogate::derivative(const Vec& xbar, int valid_rows, const Vec& u) const {
    const auto& fn = f.at(valid_rows - 1);
    const auto& gn = g.at(valid_rows - 1);
    Vec d = fn.forward(xbar);
    if (m > 0) d += unflatten(gn.forward(xbar), n, m) * u;
    return d;
}

Interval AgentSurrogate::derivative_bounds(const Interval& xbar, int valid_rows, const Interval& u) const {
    Interval d = f.at(valid_rows - 1).interval_bounds(xbar);
    if (m > 0) {
        const Interval gb = g.at(valid_rows - 1).interval_bounds(xbar);
        IntervalMatrix gm(unflatten(gb.lower, n, m), unflatten(gb.upper, n, m));
        d = add(d, multiply(gm, u));
    }
    return d;
}

nlohmann::json AgentSurrogate::to_json() const {
    nlohmann::json fj = nlohmann::json::array(), gj = nlohmann::json::array();
    for (const auto& net : f) fj.push_back(net.to_json());
    for (const auto& net : g) gj.push_back(net.to_json());
    return {{"n", n},
            {"m", m},
            {"max_rows", max_rows},
            {"eps_hat", eps_hat},
            {"grid_step", std::vector<double>(grid_step.data(), grid_step.data() + grid_step.size())},
            {"f", fj},
            {"g", gj}};
}

AgentSurrogate AgentSurrogate::from_json(const nlohmann::json& j) {
    AgentSurrogate s;
    s.n = j.at("n").get<int>();
    s.m = j.at("m").get<int>();
    s.max_rows = j.at("max_rows").get<int>();
    s.eps_hat = j.at("eps_hat").get<double>();
    const auto gs = j.at("grid_step").get<std::vector<double>>();
    s.grid_step = Eigen::Map<const Vec>(gs.data(), static_cast<Eigen::Index>(gs.size()));
    for (const auto& net : j.at("f")) s.f.push_back(FeedForwardNet::from_json(net));
    for (const auto& net : j.at("g")) s.g.push_back(FeedForwardNet::from_json(net));
    return s;
}

nlohmann::json SurrogateModel::to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : agents) a.push_back(s.to_json());
    return {{"format", 1}, {"agents", a}};
}

SurrogateModel SurrogateModel::from_json(const nlohmann::json& j) {
    SurrogateModel s;
    for (const auto& a : j.at("agents")) s.agents.push_back(AgentSurrogate::from_json(a));
    return s;
}

namespace {

/// Regular grid over a box; dimensions of zero width get a single point.
std::vector<Vec> grid_points(const Interval& box, int per_dim) {
    const int d = box.size();
    std::vector<int> counts(d);
    std::size_t total = 1;
    for (int k = 0; k < d; ++k) {
        counts[k] = box.upper[k] > box.lower[k] ? per_dim : 1;
        total *= counts[k];
    }
    std::vector<Vec> pts;
    pts.reserve(total);
    std::vector<int> idx(d, 0);
    for (std::size_t t = 0; t < total; ++t) {
        Vec p(d);
        for (int k = 0; k < d; ++k)
            p[k] = counts[k] == 1 ? box.lower[k]
                                  : box.lower[k] + (box.upper[k] - box.lower[k]) * idx[k] / (counts[k] - 1);
        pts.push_back(std::move(p));
        for (int k = 0; k < d; ++k) {
            if (++idx[k] < counts[k]) break;
            idx[k] = 0;
        }
    }
    return pts;
}

std::vector<Vec> box_vertices(const Interval& box) {
    const int d = box.size();
    std::vector<Vec> out;
    for (int mask = 0; mask < (1 << d); ++mask) {
        Vec v(d);
        for (int k = 0; k < d; ++k) v[k] = (mask >> k) & 1 ? box.upper[k] : box.lower[k];
        out.push_back(std::move(v));
    }
    return out;
}

/// Least-squares single affine layer y = W x + b.
FeedForwardNet fit_affine(const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
    const int din = static_cast<int>(xs.front().size()), dout = static_cast<int>(ys.front().size());
    Mat a(xs.size(), din + 1), y(ys.size(), dout);
    for (std::size_t r = 0; r < xs.size(); ++r) {
        a.row(r).head(din) = xs[r].transpose();
        a(r, din) = 1.0;
        y.row(r) = ys[r].transpose();
    }
    const Mat sol = a.completeOrthogonalDecomposition().solve(y);
    DenseLayer l;
    l.weight = sol.topRows(din).transpose();
    l.bias = sol.row(din).transpose();
    l.activation = Activation::identity;
    return FeedForwardNet({l});
}

FeedForwardNet fit_regression(const std::vector<Vec>& xs, const std::vector<Vec>& ys, const SurrogateConfig& cfg,
                              std::mt19937_64& rng) {
    if (cfg.hidden.empty()) return fit_affine(xs, ys);
    std::vector<int> sizes{static_cast<int>(xs.front().size())};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(static_cast<int>(ys.front().size()));
    FeedForwardNet net = FeedForwardNet::random(sizes, cfg.activation, Activation::identity, rng);
    Vec params = net.parameters();
    Optimizer opt(static_cast<int>(params.size()), true);
    std::vector<std::size_t> order(xs.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    const int batch = std::max(1, cfg.batch_size);
    double loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            Vec grad = Vec::Zero(params.size());
            for (std::size_t k = start; k < end; ++k) {
                FeedForwardNet::Trace t;
                const Vec err = net.forward(xs[order[k]], t) - ys[order[k]];
                loss += err.squaredNorm();
                net.backward(t, 2.0 * err / static_cast<double>(end - start), &grad);
            }
            opt.step(params, grad, cfg.learning_rate);
            net.set_parameters(params);
        }
        if (!std::isfinite(loss)) throw DivergenceError(epoch, loss, "surrogate fit diverged");
    }
    return net;
}

}  // namespace

namespace {

struct GridSpec {
    Interval box;
    int per_dim = 2;
};

/// Grid box for a valid-row count: neighbor rows range over the hull of the
/// communicable agents' domains, padding rows stay zero.
GridSpec surrogate_grid(const SystemTopology& topo, int i, const std::vector<Interval>& domains, int valid,
                        int points_per_dim, int max_points) {
    const int n = topo.state_dim, rows = topo.M(i);
    for (const auto& d : domains)
        if (!d.lower.allFinite() || !d.upper.allFinite()) throw ConfigError("surrogate: unbounded domain");
    Interval neighbor_box = domains[i];
    bool first = true;
    for (int j : topo.communicable[i]) {
        neighbor_box = first ? domains[j] : neighbor_box.hull(domains[j]);
        first = false;
    }
    GridSpec g{Interval(rows * n), std::max(2, points_per_dim)};
    g.box.set_segment(0, domains[i]);
    for (int k = 1; k < valid; ++k) g.box.set_segment(k * n, neighbor_box);
    auto count = [&](int p) {
        double c = 1.0;
        for (int k = 0; k < g.box.size(); ++k)
            if (g.box.upper[k] > g.box.lower[k]) c *= p;
        return c;
    };
    // coarsen until the grid fits the point budget
    while (g.per_dim > 2 && count(g.per_dim) > max_points) --g.per_dim;
    if (count(g.per_dim) > max_points) throw ConfigError("surrogate: grid exceeds point budget");
    return g;
}

}  // namespace

double surrogate_error(const AgentDynamics& dyn, const AgentSurrogate& s, const SystemTopology& topo, int i,
                       const std::vector<Interval>& domains, const Interval& control_bounds, int points_per_dim,
                       int max_points) {
    const int n = topo.state_dim, m = dyn.control_dim(), rows = topo.M(i);
    const auto u_vertices = box_vertices(control_bounds);
    double eps_hat = 0.0;
    for (int valid = 1; valid <= rows; ++valid) {
        const GridSpec spec = surrogate_grid(topo, i, domains, valid, points_per_dim, max_points);
        for (const auto& p : grid_points(spec.box, spec.per_dim)) {
            const Mat xbar = unflatten(p, rows, n);
            const Vec df = dyn.drift(xbar, valid) - s.f.at(valid - 1).forward(p);
            const Mat dg = m > 0 ? Mat(dyn.input_matrix(xbar, valid) - unflatten(s.g.at(valid - 1).forward(p), n, m))
                                 : Mat::Zero(n, 0);
            for (const auto& u : u_vertices) {
                const Vec err = m > 0 ? Vec(df + dg * u) : df;
                eps_hat = std::max(eps_hat, err.cwiseAbs().maxCoeff());
            }
        }
    }
    return eps_hat;
}

AgentSurrogate fit_surrogate(const AgentDynamics& dyn, const SystemTopology& topo, int i,
                             const std::vector<Interval>& domains, const Interval& control_bounds,
                             const SurrogateConfig& cfg) {
    const int n = topo.state_dim, m = dyn.control_dim(), rows = topo.M(i);
    AgentSurrogate s;
    s.n = n;
    s.m = m;
    s.max_rows = rows;
    s.grid_step = Vec::Zero(rows * n);
    std::mt19937_64 rng(cfg.seed + 7919ULL * static_cast<std::uint64_t>(i));
    for (int valid = 1; valid <= rows; ++valid) {
        const GridSpec spec = surrogate_grid(topo, i, domains, valid, cfg.points_per_dim, cfg.max_grid_points);
        const auto pts = grid_points(spec.box, spec.per_dim);
        for (int k = 0; k < spec.box.size(); ++k)
            if (spec.box.upper[k] > spec.box.lower[k])
                s.grid_step[k] =
                    std::max(s.grid_step[k], (spec.box.upper[k] - spec.box.lower[k]) / (spec.per_dim - 1));
        std::vector<Vec> fy, gy;
        fy.reserve(pts.size());
        gy.reserve(pts.size());
        for (const auto& p : pts) {
            const Mat xbar = unflatten(p, rows, n);
            fy.push_back(dyn.drift(xbar, valid));
            if (m > 0) gy.push_back(flatten(dyn.input_matrix(xbar, valid)));
        }
        s.f.push_back(fit_regression(pts, fy, cfg, rng));
        if (m > 0) {
            s.g.push_back(fit_regression(pts, gy, cfg, rng));
        } else {
            DenseLayer l{Mat::Zero(0, rows * n), Vec::Zero(0), Activation::identity};
            s.g.push_back(FeedForwardNet({l}));
        }
    }
    s.eps_hat = surrogate_error(dyn, s, topo, i, domains, control_bounds, cfg.points_per_dim, cfg.max_grid_points);
    return s;
}

SurrogateModel fit_surrogates(const DynamicsModel& model, const SystemTopology& topo, const SurrogateConfig& cfg) {
    SurrogateModel out;
    for (int i = 0; i < model.q(); ++i)
        out.agents.push_back(
            fit_surrogate(*model.agents[i], topo, i, model.state_domain, model.control_bounds[i], cfg));
    return out;
}

}  // namespace corwa
