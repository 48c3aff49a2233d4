#include "corwa/certificate.hpp"

#include "corwa/errors.hpp"

#include <Eigen/Eigenvalues>

namespace corwa {

namespace {

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec to_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> rows_of(const Mat& m) {
    std::vector<double> out;
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

Mat square_from(const nlohmann::json& j, int q) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != q * q) throw ConfigError("certificate: coupling matrix must be q x q");
    Mat m(q, q);
    for (int r = 0; r < q; ++r)
        for (int c = 0; c < q; ++c) m(r, c) = v[r * q + c];
    return m;
}

Vec normalize(const Vec& x, const Vec& shift, const Vec& scale) {
    if (x.size() != shift.size()) throw DimensionError("certificate input has wrong size");
    return (x - shift).cwiseQuotient(scale);
}

Interval normalize(const Interval& box, const Vec& shift, const Vec& scale) {
    if (box.size() != shift.size()) throw DimensionError("certificate input box has wrong size");
    // scale entries are positive
    return {(box.lower - shift).cwiseQuotient(scale), (box.upper - shift).cwiseQuotient(scale)};
}

}  // namespace

// ------------------------------------------------------------ scalar certificate

double ScalarCertificate::value(const Vec& x) const {
    const Vec z = normalize(x, shift, scale);
    if (form == ScalarForm::raw) return net.forward(z)[0];
    const Vec r = net.forward(z) - net.forward(Vec::Zero(z.size()));
    return r.squaredNorm() + delta * z.squaredNorm();
}

double ScalarCertificate::value(const Vec& x, Trace& t) const {
    t.z = normalize(x, shift, scale);
    if (form == ScalarForm::raw) return net.forward(t.z, t.tz)[0];
    t.r = net.forward(t.z, t.tz) - net.forward(Vec::Zero(t.z.size()), t.t0);
    return t.r.squaredNorm() + delta * t.z.squaredNorm();
}

Vec ScalarCertificate::backward(const Trace& t, double upstream, Vec* param_grad) const {
    Vec dz;
    if (form == ScalarForm::raw) {
        dz = net.backward(t.tz, Vec::Constant(1, upstream), param_grad);
    } else {
        const Vec up = 2.0 * upstream * t.r;
        dz = net.backward(t.tz, up, param_grad) + 2.0 * upstream * delta * t.z;
        if (param_grad) net.backward(t.t0, -up, param_grad);
    }
    return dz.cwiseQuotient(scale);
}

Vec ScalarCertificate::gradient(const Vec& x) const {
    Trace t;
    value(x, t);
    return backward(t, 1.0, nullptr);
}

std::pair<Range, Interval> ScalarCertificate::bounds_with_gradient(const Interval& box) const {
    const Interval zb = normalize(box, shift, scale);
    auto [out, jac] = net.bounds_with_jacobian(zb);
    const int d = zb.size();
    Interval grad(d);
    if (form == ScalarForm::raw) {
        for (int c = 0; c < d; ++c) grad.set(c, jac(0, c) * (1.0 / scale[c]));
        return {out[0], grad};
    }
    const Vec n0 = net.forward(Vec::Zero(d));
    Range v{0.0, 0.0};
    std::vector<Range> r(out.size());
    for (int k = 0; k < out.size(); ++k) {
        r[k] = out[k] - n0[k];
        v += square(r[k]);
    }
    for (int c = 0; c < d; ++c) v += delta * square(zb[c]);
    for (int c = 0; c < d; ++c) {
        Range g{0.0, 0.0};
        for (int k = 0; k < out.size(); ++k) g += jac(k, c) * r[k];
        g = 2.0 * g + (2.0 * delta) * zb[c];
        grad.set(c, g * (1.0 / scale[c]));
    }
    v.lo = std::max(v.lo, 0.0);
    return {v, grad};
}

Range ScalarCertificate::bounds(const Interval& box) const {
    const Interval zb = normalize(box, shift, scale);
    const Interval out = net.interval_bounds(zb);
    if (form == ScalarForm::raw) return out[0];
    const Vec n0 = net.forward(Vec::Zero(zb.size()));
    Range v{0.0, 0.0};
    for (int k = 0; k < out.size(); ++k) v += square(out[k] - n0[k]);
    for (int c = 0; c < zb.size(); ++c) v += delta * square(zb[c]);
    v.lo = std::max(v.lo, 0.0);
    return v;
}

Interval ScalarCertificate::gradient_bounds(const Interval& box) const { return bounds_with_gradient(box).second; }

IntervalMatrix ScalarCertificate::hessian_bounds(const Interval& box) const {
    const Interval zb = normalize(box, shift, scale);
    const auto so = net.second_order_bounds(zb);
    const int d = zb.size();
    IntervalMatrix hz = IntervalMatrix::point(Mat::Zero(d, d));
    if (form == ScalarForm::raw) {
        hz = so.hessian[0];
    } else {
        // 2 sum_k (J_ka J_kb + r_k H_k,ab) + 2 delta I
        const Vec n0 = net.forward(Vec::Zero(d));
        for (int k = 0; k < so.value.size(); ++k) {
            const Range r = so.value[k] - n0[k];
            for (int a = 0; a < d; ++a)
                for (int b = a; b < d; ++b) {
                    const Range jj = a == b ? square(so.jacobian(k, a)) : so.jacobian(k, a) * so.jacobian(k, b);
                    const Range e = Range{hz.lower(a, b), hz.upper(a, b)} + 2.0 * (jj + r * so.hessian[k](a, b));
                    hz.lower(a, b) = hz.lower(b, a) = e.lo;
                    hz.upper(a, b) = hz.upper(b, a) = e.hi;
                }
        }
        for (int a = 0; a < d; ++a) {
            hz.lower(a, a) += 2.0 * delta;
            hz.upper(a, a) += 2.0 * delta;
        }
    }
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            const double s = 1.0 / (scale[a] * scale[b]);
            hz.lower(a, b) *= s;
            hz.upper(a, b) *= s;
        }
    return hz;
}

nlohmann::json ScalarCertificate::to_json() const {
    return {{"net", net.to_json()},
            {"shift", to_std(shift)},
            {"scale", to_std(scale)},
            {"form", form == ScalarForm::raw ? "raw" : "positive_definite"},
            {"delta", delta}};
}

ScalarCertificate ScalarCertificate::from_json(const nlohmann::json& j) {
    ScalarCertificate s;
    s.net = FeedForwardNet::from_json(j.at("net"));
    s.shift = to_vec(j.at("shift"));
    s.scale = to_vec(j.at("scale"));
    const auto f = j.at("form").get<std::string>();
    if (f == "raw") s.form = ScalarForm::raw;
    else if (f == "positive_definite") s.form = ScalarForm::positive_definite;
    else throw ConfigError("certificate: unknown form '" + f + "'");
    s.delta = j.at("delta").get<double>();
    if ((s.scale.array() <= 0.0).any()) throw ConfigError("certificate: scale entries must be positive");
    return s;
}

// ------------------------------------------------------------ controller

Vec ControllerNet::forward(const Vec& xbar) const {
    const Vec raw = out_shift + out_scale.cwiseProduct(net.forward(normalize(xbar, shift, scale)));
    return raw.cwiseMax(bounds.lower).cwiseMin(bounds.upper);
}

Vec ControllerNet::forward(const Vec& xbar, Trace& t) const {
    t.raw = out_shift + out_scale.cwiseProduct(net.forward(normalize(xbar, shift, scale), t.t));
    return t.raw.cwiseMax(bounds.lower).cwiseMin(bounds.upper);
}

Vec ControllerNet::backward(const Trace& t, const Vec& upstream, Vec* param_grad) const {
    Vec up = upstream.cwiseProduct(out_scale);
    for (int k = 0; k < up.size(); ++k)
        if (t.raw[k] <= bounds.lower[k] || t.raw[k] >= bounds.upper[k]) up[k] = 0.0;
    return net.backward(t.t, up, param_grad).cwiseQuotient(scale);
}

Interval ControllerNet::output_bounds(const Interval& box) const {
    Interval out = net.interval_bounds(normalize(box, shift, scale));
    for (int k = 0; k < out.size(); ++k) {
        const Range r = out_scale[k] * out[k] + out_shift[k];
        out.set(k, {std::clamp(r.lo, bounds.lower[k], bounds.upper[k]), std::clamp(r.hi, bounds.lower[k], bounds.upper[k])});
    }
    return out;
}

std::pair<Interval, IntervalMatrix> ControllerNet::bounds_with_jacobian(const Interval& box) const {
    auto [out, jac] = net.bounds_with_jacobian(normalize(box, shift, scale));
    for (int k = 0; k < out.size(); ++k) {
        const Range r = out_scale[k] * out[k] + out_shift[k];
        // clamp derivative is 1 strictly inside U, 0 when saturated, [0,1] across a bound
        Range d{1.0, 1.0};
        if (r.hi <= bounds.lower[k] || r.lo >= bounds.upper[k]) d = {0.0, 0.0};
        else if (r.lo < bounds.lower[k] || r.hi > bounds.upper[k]) d = {0.0, 1.0};
        out.set(k, {std::clamp(r.lo, bounds.lower[k], bounds.upper[k]), std::clamp(r.hi, bounds.lower[k], bounds.upper[k])});
        for (int c = 0; c < jac.cols(); ++c) {
            const Range e = d * (jac(k, c) * (out_scale[k] / scale[c]));
            jac.lower(k, c) = e.lo;
            jac.upper(k, c) = e.hi;
        }
    }
    return {out, jac};
}

nlohmann::json ControllerNet::to_json() const {
    return {{"net", net.to_json()},
            {"shift", to_std(shift)},
            {"scale", to_std(scale)},
            {"out_shift", to_std(out_shift)},
            {"out_scale", to_std(out_scale)},
            {"lower", to_std(bounds.lower)},
            {"upper", to_std(bounds.upper)}};
}

ControllerNet ControllerNet::from_json(const nlohmann::json& j) {
    ControllerNet c;
    c.net = FeedForwardNet::from_json(j.at("net"));
    c.shift = to_vec(j.at("shift"));
    c.scale = to_vec(j.at("scale"));
    c.out_shift = to_vec(j.at("out_shift"));
    c.out_scale = to_vec(j.at("out_scale"));
    c.bounds = Interval(to_vec(j.at("lower")), to_vec(j.at("upper")));
    if ((c.scale.array() <= 0.0).any()) throw ConfigError("controller: scale entries must be positive");
    return c;
}

// ------------------------------------------------------------ slacks / bundle

void Slacks::validate() const {
    if (!(eps0 > 0.0)) throw ConfigError("slacks: eps0 must be positive");
    for (double e : eps)
        if (!(e > 0.0)) throw ConfigError("slacks: eps1..eps5 must be positive");
    for (double s : sigma)
        if (!(s > 0.0)) throw ConfigError("slacks: sigma weights must be positive");
}

nlohmann::json Slacks::to_json() const { return {{"eps0", eps0}, {"eps", eps}, {"sigma", sigma}}; }

Slacks Slacks::from_json(const nlohmann::json& j) {
    Slacks s;
    for (const auto& [key, _] : j.items())
        if (key != "eps0" && key != "eps" && key != "sigma") throw ConfigError("slacks: unknown key '" + key + "'");
    if (j.contains("eps0")) s.eps0 = j.at("eps0").get<double>();
    if (j.contains("eps")) s.eps = j.at("eps").get<std::array<double, 5>>();
    if (j.contains("sigma")) s.sigma = j.at("sigma").get<std::array<double, 3>>();
    s.validate();
    return s;
}

void CoRwaCertificate::validate() const {
    const int n = q();
    if (static_cast<int>(h.size()) != n || static_cast<int>(pi.size()) != n || static_cast<int>(active.size()) != n)
        throw ConfigError("certificate: per-agent arrays differ in length");
    if (Lambda.rows() != n || Lambda.cols() != n || Upsilon.rows() != n || Upsilon.cols() != n)
        throw ConfigError("certificate: coupling matrices must be q x q");
    for (int i = 0; i < n; ++i)
        if (is_active(i) && (V[i].empty() || h[i].empty() || pi[i].empty()))
            throw ConfigError("certificate: active agent " + std::to_string(i) + " lacks networks");
    slacks.validate();
}

nlohmann::json CoRwaCertificate::to_json() const {
    nlohmann::json agents = nlohmann::json::array();
    for (int i = 0; i < q(); ++i) {
        nlohmann::json a = {{"active", is_active(i)}};
        if (is_active(i)) {
            a["V"] = V[i].to_json();
            a["h"] = h[i].to_json();
            a["pi"] = pi[i].to_json();
        }
        agents.push_back(a);
    }
    return {{"format", 1},
            {"q", q()},
            {"agents", agents},
            {"Lambda", rows_of(Lambda)},
            {"Upsilon", rows_of(Upsilon)},
            {"slacks", slacks.to_json()},
            {"eV", eV},
            {"eh", eh}};
}

CoRwaCertificate CoRwaCertificate::from_json(const nlohmann::json& j) {
    if (j.value("format", 0) != 1) throw ConfigError("certificate: unsupported format");
    CoRwaCertificate c;
    const int q = j.at("q").get<int>();
    const auto& agents = j.at("agents");
    if (static_cast<int>(agents.size()) != q) throw ConfigError("certificate: agent list length differs from q");
    for (const auto& a : agents) {
        const bool act = a.at("active").get<bool>();
        c.active.push_back(act ? 1 : 0);
        c.V.push_back(act ? ScalarCertificate::from_json(a.at("V")) : ScalarCertificate{});
        c.h.push_back(act ? ScalarCertificate::from_json(a.at("h")) : ScalarCertificate{});
        c.pi.push_back(act ? ControllerNet::from_json(a.at("pi")) : ControllerNet{});
    }
    c.Lambda = square_from(j.at("Lambda"), q);
    c.Upsilon = square_from(j.at("Upsilon"), q);
    c.slacks = Slacks::from_json(j.at("slacks"));
    c.eV = j.value("eV", std::vector<double>{});
    c.eh = j.value("eh", std::vector<double>{});
    c.validate();
    return c;
}

// ------------------------------------------------------------ matrix algebra

bool check_metzler(const Mat& m, double tol) {
    if (m.rows() != m.cols()) throw DimensionError("check_metzler: matrix must be square");
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c)
            if (r != c && m(r, c) < -tol) return false;
    return true;
}

double spectral_abscissa(const Mat& m) {
    if (m.rows() != m.cols()) throw DimensionError("spectral_abscissa: matrix must be square");
    Eigen::EigenSolver<Mat> es(m, false);
    if (es.info() != Eigen::Success) throw DiagnosticsError("eigenvalue iteration did not converge");
    return es.eigenvalues().real().maxCoeff();
}

bool check_hurwitz(const Mat& m) {
    if (m.rows() != m.cols()) throw DimensionError("check_hurwitz: matrix must be square");
    if (m.rows() == 0) return true;
    const bool by_eigen = spectral_abscissa(m) < -1e-9;
    if (!check_metzler(m, 0.0)) return by_eigen;
    // -M is a nonsingular M-matrix iff all leading principal minors are positive
    bool by_minors = true;
    const Mat neg = -m;
    for (int k = 1; k <= m.rows() && by_minors; ++k)
        by_minors = neg.topLeftCorner(k, k).determinant() > 0.0;
    if (by_eigen != by_minors)
        throw DiagnosticsError("Hurwitz test: eigenvalues and M-matrix minors disagree");
    return by_eigen;
}

PositiveP solve_positive_p(const Mat& lambda) {
    if (!check_metzler(lambda)) throw std::invalid_argument("solve_positive_p: matrix is not Metzler");
    if (!check_hurwitz(lambda)) throw std::invalid_argument("solve_positive_p: matrix is not Hurwitz");
    const int q = static_cast<int>(lambda.rows());
    PositiveP out;
    Eigen::FullPivLU<Mat> lu(lambda.transpose());
    if (!lu.isInvertible()) throw DiagnosticsError("solve_positive_p: singular system");
    out.p = lu.solve(-Vec::Ones(q));
    if ((out.p.array() <= 0.0).any() || !out.p.allFinite()) {
        // left Perron vector of Lambda + alpha I
        Mat shifted = lambda;
        double pert = 0.0;
        const double alpha = lambda.diagonal().cwiseAbs().maxCoeff() + 1.0;
        shifted.diagonal().array() += alpha;
        Vec v = Vec::Ones(q) / std::sqrt(static_cast<double>(q));
        Mat nonneg = shifted.transpose();
        // power iteration stalls on reducible matrices; a tiny coupling makes it irreducible
        for (int r = 0; r < q; ++r)
            for (int c = 0; c < q; ++c)
                if (r != c && nonneg(r, c) == 0.0) {
                    nonneg(r, c) = 1e-9;
                    pert = 1e-9;
                }
        for (int it = 0; it < 100000; ++it) {
            Vec nv = nonneg * v;
            nv /= nv.norm();
            if ((nv - v).norm() < 1e-14) {
                v = nv;
                break;
            }
            v = nv;
        }
        out.p = v;
        out.perron_fallback = true;
        out.perturbation = pert;
    }
    out.c = -(lambda.transpose() * out.p);
    out.c_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < q; ++i) out.c_min = std::min(out.c_min, out.c[i] / out.p[i]);
    return out;
}

Vec comparison_step(const Mat& m, const Vec& z, double T) {
    if (m.cols() != z.size()) throw DimensionError("comparison_step: size mismatch");
    // (I + T M) z row by row so that a nonnegative map keeps nonnegative
    // states; rounding in 1 + T m_ii at T = 1 / |m_ii| is dropped
    Vec out(z.size());
    for (int i = 0; i < z.size(); ++i) {
        double diag = 1.0 + T * m(i, i);
        if (diag < 0.0 && diag > -1e-12) diag = 0.0;
        double s = diag * z[i];
        for (int j = 0; j < z.size(); ++j)
            if (j != i) s += T * m(i, j) * z[j];
        out[i] = s;
    }
    return out;
}

// ------------------------------------------------------------ residuals

std::vector<Vec> closed_loop_controls(const CoRwaCertificate& cert, const Scenario& sc, const JointState& joint) {
    std::vector<Vec> u(sc.q());
    for (int i = 0; i < sc.q(); ++i) {
        if (cert.is_active(i)) u[i] = cert.pi[i].forward(extended_state(joint, sc.topo, i).flat());
        else u[i] = clip_to(sc.model.control_bounds[i], sc.exogenous_at(joint.time, i));
    }
    return u;
}

namespace {

Vec agent_derivative(const DerivativeSource& src, int i, const ExtendedState& e, const Vec& u) {
    if (src.surrogate) return src.surrogate->agents[i].derivative(e.flat(), e.valid_rows, u);
    return src.scenario->model.agents[i]->derivative(e.rows, e.valid_rows, u);
}

/// Coupling sum over self then neighbors in mask order.
double masked_coupling(const Mat& coupling, int i, const std::vector<int>& neighbors, const Vec& values) {
    double s = coupling(i, i) * values[i];
    for (int j : neighbors) s += coupling(i, j) * values[j];
    return s;
}

}  // namespace

Mat closed_loop_derivative(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint) {
    const Scenario& sc = *src.scenario;
    Mat d(sc.q(), sc.n());
    for (int i = 0; i < sc.q(); ++i) {
        const ExtendedState e = extended_state(joint, sc.topo, i);
        const Vec u = cert.is_active(i) ? cert.pi[i].forward(e.flat())
                                        : clip_to(sc.model.control_bounds[i], sc.exogenous_at(joint.time, i));
        d.row(i) = agent_derivative(src, i, e, u).transpose();
    }
    return d;
}

Vec lyapunov_vector(const CoRwaCertificate& cert, const JointState& joint) {
    Vec v = Vec::Zero(cert.q());
    for (int i = 0; i < cert.q(); ++i)
        if (cert.is_active(i)) v[i] = cert.V[i].value(joint.x.row(i).transpose());
    return v;
}

Vec barrier_vector(const CoRwaCertificate& cert, const Scenario& sc, const JointState& joint) {
    Vec v = Vec::Zero(cert.q());
    for (int i = 0; i < cert.q(); ++i)
        if (cert.is_active(i)) v[i] = cert.h[i].value(extended_state(joint, sc.topo, i).flat());
    return v;
}

double clf_residual(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint, int i) {
    if (!cert.is_active(i)) return 0.0;
    const Mat d = closed_loop_derivative(cert, src, joint);
    const Vec xi = joint.x.row(i).transpose();
    const double lie = cert.V[i].gradient(xi).dot(d.row(i).transpose());
    const auto nb = neighbor_set(joint, src.scenario->topo, i);
    return lie - masked_coupling(cert.Lambda, i, nb, lyapunov_vector(cert, joint));
}

double cbf_residual(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint, int i) {
    if (!cert.is_active(i)) return 0.0;
    const Scenario& sc = *src.scenario;
    const Mat d = closed_loop_derivative(cert, src, joint);
    const auto nb = neighbor_set(joint, sc.topo, i);
    const ExtendedState e = extended_state(joint.x, sc.topo, i, nb);
    const ExtendedState de = extended_state(d, sc.topo, i, nb);
    const double lie = cert.h[i].gradient(e.flat()).dot(de.flat());
    return lie - masked_coupling(cert.Upsilon, i, nb, barrier_vector(cert, sc, joint));
}

double clf_residual_discrete(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint,
                             int i, double T) {
    if (!cert.is_active(i)) return 0.0;
    const Mat d = closed_loop_derivative(cert, src, joint);
    const Vec xi = joint.x.row(i).transpose();
    const Vec next = xi + T * d.row(i).transpose();
    const double quotient = (cert.V[i].value(next) - cert.V[i].value(xi)) / T;
    const auto nb = neighbor_set(joint, src.scenario->topo, i);
    return quotient - masked_coupling(cert.Lambda, i, nb, lyapunov_vector(cert, joint));
}

double cbf_residual_discrete(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint,
                             int i, double T) {
    if (!cert.is_active(i)) return 0.0;
    const Scenario& sc = *src.scenario;
    const Mat d = closed_loop_derivative(cert, src, joint);
    const auto nb = neighbor_set(joint, sc.topo, i);
    const Mat next = joint.x + T * d;
    const Vec now = extended_state(joint.x, sc.topo, i, nb).flat();
    const Vec after = extended_state(next, sc.topo, i, nb).flat();
    const double quotient = (cert.h[i].value(after) - cert.h[i].value(now)) / T;
    return quotient - masked_coupling(cert.Upsilon, i, nb, barrier_vector(cert, sc, joint));
}

double scalar_lyapunov(const CoRwaCertificate& cert, const Vec& p, const JointState& joint) {
    return p.dot(lyapunov_vector(cert, joint));
}

}  // namespace corwa
