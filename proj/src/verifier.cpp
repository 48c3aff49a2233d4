#include "corwa/verifier.hpp"

#include "corwa/errors.hpp"
#include "corwa/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <tuple>
#include <cmath>
#include <functional>
#include <limits>

namespace corwa {

using nlohmann::json;

std::string to_string(ConditionTag t) {
    switch (t) {
        case ConditionTag::lyap_decrement: return "lyap_decrement";
        case ConditionTag::barrier_increment: return "barrier_increment";
        case ConditionTag::lyap_positive: return "lyap_positive";
        case ConditionTag::barrier_safe_positive: return "barrier_safe_positive";
        case ConditionTag::barrier_unsafe_negative: return "barrier_unsafe_negative";
    }
    return "?";
}

ConditionTag condition_from_string(const std::string& s) {
    for (ConditionTag t : all_conditions())
        if (to_string(t) == s) return t;
    throw ConfigError("unknown condition '" + s + "'");
}

const std::vector<ConditionTag>& all_conditions() {
    static const std::vector<ConditionTag> tags{ConditionTag::lyap_decrement, ConditionTag::barrier_increment,
                                                ConditionTag::lyap_positive, ConditionTag::barrier_safe_positive,
                                                ConditionTag::barrier_unsafe_negative};
    return tags;
}

std::string to_string(VerificationStatus s) {
    switch (s) {
        case VerificationStatus::verified: return "Verified";
        case VerificationStatus::counterexample: return "Counterexample";
        case VerificationStatus::unknown: return "Unknown";
    }
    return "?";
}

VerificationStatus combine(VerificationStatus a, VerificationStatus b) {
    auto rank = [](VerificationStatus s) {
        return s == VerificationStatus::counterexample ? 2 : s == VerificationStatus::unknown ? 1 : 0;
    };
    return rank(a) >= rank(b) ? a : b;
}

VerificationBudget VerificationBudget::doubled() const {
    VerificationBudget b = *this;
    b.max_depth *= 2;
    b.max_boxes *= 2;
    b.max_seconds *= 2.0;
    return b;
}

json VerificationBudget::to_json() const {
    return {{"max_depth", max_depth},
            {"max_boxes", max_boxes},
            {"max_seconds", max_seconds},
            {"max_witnesses", max_witnesses},
            {"split", split == SplitRule::best ? "best" : "widest"}};
}

VerificationBudget VerificationBudget::from_json(const json& j) {
    VerificationBudget b;
    for (const auto& [key, v] : j.items()) {
        if (key == "max_depth") b.max_depth = v.get<int>();
        else if (key == "max_boxes") b.max_boxes = v.get<long long>();
        else if (key == "max_seconds") b.max_seconds = v.get<double>();
        else if (key == "max_witnesses") b.max_witnesses = v.get<int>();
        else if (key == "split") {
            const auto s = v.get<std::string>();
            if (s == "best") b.split = SplitRule::best;
            else if (s == "widest") b.split = SplitRule::widest;
            else throw ConfigError("budget.split must be 'widest' or 'best'");
        } else
            throw ConfigError("unknown budget key '" + key + "'");
    }
    if (b.max_depth < 0 || b.max_boxes < 1 || b.max_seconds < 0.0 || b.max_witnesses < 1)
        throw ConfigError("budget limits out of range");
    return b;
}

namespace {

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json joint_to_json(const JointState& js) {
    json rows = json::array();
    for (int r = 0; r < js.x.rows(); ++r) rows.push_back(to_std(js.x.row(r).transpose()));
    return {{"time", js.time}, {"x", rows}};
}

json box_to_json(const Interval& b) { return {{"lower", to_std(b.lower)}, {"upper", to_std(b.upper)}}; }

}  // namespace

json VerificationQuery::to_json() const {
    return {{"agent", agent},      {"condition", corwa::to_string(tag)}, {"pattern", pattern},
            {"box", box_to_json(box)}, {"margin", margin},                    {"T", T}};
}

json VerificationOutcome::to_json() const {
    json w = json::array();
    for (const auto& x : witnesses)
        w.push_back({{"agent", x.agent}, {"condition", to_string(x.tag)}, {"residual", x.residual},
                     {"state", joint_to_json(x.joint)}});
    return {{"query", query.to_json()},
            {"status", to_string(status)},
            {"witnesses", w},
            {"unresolved", unresolved.size()},
            {"boxes", boxes},
            {"depth", depth},
            {"seconds", seconds}};
}

// ---------------------------------------------------------------- patterns

namespace {

using StateBox = std::function<Interval(int)>;

bool tighten_impl(const SystemTopology& topo, int i, const std::vector<int>& pattern, Interval& box,
                  const StateBox& absent_box) {
    const int n = topo.state_dim;
    const double R = topo.radius[i];
    const auto& slice = topo.position_slice;
    const Interval own = box.segment(0, n);
    std::vector<Range> dist;
    for (std::size_t k = 0; k < pattern.size(); ++k) {
        const int off = static_cast<int>(k + 1) * n;
        for (int c : slice) {
            const double lo = std::max(box.lower[off + c], own.lower[c] - R);
            const double hi = std::min(box.upper[off + c], own.upper[c] + R);
            if (lo > hi) return false;
            box.lower[off + c] = lo;
            box.upper[off + c] = hi;
        }
        const Range d = distance_range(own, box.segment(off, n), slice);
        if (d.lo > R) return false;
        if (!dist.empty() && dist.back().lo > d.hi) return false;
        dist.push_back(d);
    }
    const int capacity = topo.M(i) - 1;
    const bool full = static_cast<int>(pattern.size()) >= capacity;
    for (int a : topo.communicable[i]) {
        if (a == i || std::find(pattern.begin(), pattern.end(), a) != pattern.end()) continue;
        if (capacity == 0) continue;
        const Range d = distance_range(own, absent_box(a), slice);
        if (d.hi > R) continue;
        if (full && !dist.empty() && d.hi >= dist.back().lo) continue;
        return false;
    }
    return true;
}

void ordered_subsets(const std::vector<int>& cands, int max_len, std::vector<int>& cur, std::vector<int>& used,
                     std::vector<std::vector<int>>& out) {
    out.push_back(cur);
    if (static_cast<int>(cur.size()) >= max_len) return;
    for (std::size_t k = 0; k < cands.size(); ++k) {
        if (used[k]) continue;
        used[k] = 1;
        cur.push_back(cands[k]);
        ordered_subsets(cands, max_len, cur, used, out);
        cur.pop_back();
        used[k] = 0;
    }
}

std::vector<std::vector<int>> all_patterns(const SystemTopology& topo, int i) {
    std::vector<int> cands;
    for (int a : topo.communicable[i])
        if (a != i) cands.push_back(a);
    std::vector<std::vector<int>> out;
    std::vector<int> cur, used(cands.size(), 0);
    ordered_subsets(cands, topo.M(i) - 1, cur, used, out);
    return out;
}

Interval stack_rows(const std::vector<Interval>& rows) {
    int total = 0;
    for (const auto& r : rows) total += r.size();
    Interval out(total);
    int off = 0;
    for (const auto& r : rows) {
        out.set_segment(off, r);
        off += r.size();
    }
    return out;
}

/// Rows beyond the box are zero padding up to M_i rows.
Interval padded(const Interval& box, int width) {
    Interval out(width);
    out.set_segment(0, box);
    return out;
}

}  // namespace

bool tighten_to_pattern(const SystemTopology& topo, const std::vector<Interval>& domains, int i,
                        const std::vector<int>& pattern, Interval& box) {
    return tighten_impl(topo, i, pattern, box, [&](int a) { return domains[a]; });
}

std::vector<std::vector<int>> feasible_patterns(const SystemTopology& topo, int i,
                                                const std::vector<Interval>& domains) {
    std::vector<std::vector<int>> out;
    for (const auto& pat : all_patterns(topo, i)) {
        std::vector<Interval> rows{domains[i]};
        for (int a : pat) rows.push_back(domains[a]);
        Interval box = stack_rows(rows);
        if (tighten_impl(topo, i, pat, box, [&](int a) { return domains[a]; })) out.push_back(pat);
    }
    return out;
}

// ---------------------------------------------------------------- bounds

namespace {

struct Problem {
    const VerificationQuery& q;
    const VerifierContext& ctx;
    const Scenario& sc;
    const CoRwaCertificate& cert;
    int n;
};

const SurrogateModel& surrogate_of(const VerifierContext& ctx) {
    if (!ctx.surrogate) throw Error("verifier: a surrogate model is required");
    return *ctx.surrogate;
}

/// Closed-loop derivative enclosure of agent j with extended-state box xbar.
Interval closed_loop_bounds(const VerifierContext& ctx, int j, const Interval& xbar, int valid) {
    const Scenario& sc = *ctx.scenario;
    const Interval u = ctx.cert->is_active(j) ? ctx.cert->pi[j].output_bounds(xbar) : sc.model.control_bounds[j];
    return surrogate_of(ctx).agents[j].derivative_bounds(xbar, valid, u);
}

struct Flow {
    Interval F;
    IntervalMatrix J;  // d F / d xbar
};

/// Closed-loop derivative of agent j and its Jacobian over the extended-state box.
Flow closed_loop_flow(const VerifierContext& ctx, int j, const Interval& xbar, int valid) {
    const Scenario& sc = *ctx.scenario;
    const AgentSurrogate& sur = surrogate_of(ctx).agents[j];
    const int n = sur.n, m = sur.m, w = xbar.size();
    auto [fv, fj] = sur.f.at(valid - 1).bounds_with_jacobian(xbar);
    Interval u = sc.model.control_bounds[j];
    IntervalMatrix uj = IntervalMatrix::point(Mat::Zero(m, w));
    if (ctx.cert->is_active(j)) std::tie(u, uj) = ctx.cert->pi[j].bounds_with_jacobian(xbar);
    Flow out{fv, fj};
    if (m == 0) return out;
    auto [gv, gj] = sur.g.at(valid - 1).bounds_with_jacobian(xbar);
    for (int r = 0; r < n; ++r) {
        Range fr = fv[r];
        for (int c = 0; c < m; ++c) fr += gv[r * m + c] * u[c];
        out.F.set(r, fr);
        for (int d = 0; d < w; ++d) {
            Range e = fj(r, d);
            for (int c = 0; c < m; ++c) e += gj(r * m + c, d) * u[c] + gv[r * m + c] * uj(c, d);
            out.J.lower(r, d) = e.lo;
            out.J.upper(r, d) = e.hi;
        }
    }
    return out;
}

struct Hop {
    Interval F;
    Range h;
    int patterns = 0;
    // valid when patterns == 1: derivatives with respect to the query box
    IntervalMatrix J;
    Interval grad_h;
};

/// Derivative and barrier value of neighbor j over every neighborhood it can
/// have while agent i's rows lie in `box`.
Hop neighbor_hop(const Problem& p, const Interval& box, int j, bool with_derivatives) {
    const SystemTopology& topo = p.sc.topo;
    const int n = p.n;
    const int i = p.q.agent;
    const auto& pattern = p.q.pattern;
    // box row holding agent a, or -1
    auto box_row = [&](int a) {
        if (a == i) return 0;
        for (std::size_t k = 0; k < pattern.size(); ++k)
            if (pattern[k] == a) return static_cast<int>(k + 1);
        return -1;
    };
    auto state_box = [&](int a) {
        const int r = box_row(a);
        return r >= 0 ? box.segment(r * n, n) : p.sc.model.state_domain[a];
    };
    Hop out;
    auto visit = [&](const std::vector<int>& pat, bool check) {
        // i sees j within R_i; if j's list has room and R_j >= R_i, j sees i too
        if (check && box_row(j) > 0 && std::find(pat.begin(), pat.end(), i) == pat.end() &&
            static_cast<int>(pat.size()) < topo.M(j) - 1 && topo.radius[j] >= topo.radius[i] &&
            std::find(topo.communicable[j].begin(), topo.communicable[j].end(), i) != topo.communicable[j].end())
            return;
        std::vector<Interval> rows{state_box(j)};
        for (int a : pat) rows.push_back(state_box(a));
        Interval vb = stack_rows(rows);
        if (check && !tighten_impl(topo, j, pat, vb, state_box)) return;
        const Interval xbar = padded(vb, topo.extended_dim(j));
        const int valid = 1 + static_cast<int>(pat.size());
        Flow flow;
        Range h = Range::point(0.0);
        Interval gh(xbar.size());
        if (with_derivatives) {
            flow = closed_loop_flow(p.ctx, j, xbar, valid);
            if (p.cert.is_active(j)) std::tie(h, gh) = p.cert.h[j].bounds_with_gradient(xbar);
        } else {
            flow.F = closed_loop_bounds(p.ctx, j, xbar, valid);
            if (p.cert.is_active(j)) h = p.cert.h[j].bounds(xbar);
        }
        out.F = out.patterns ? out.F.hull(flow.F) : flow.F;
        out.h = out.patterns ? out.h.hull(h) : h;
        ++out.patterns;
        if (!with_derivatives) return;
        const int width = box.size();
        out.J = IntervalMatrix::point(Mat::Zero(n, width));
        out.grad_h = Interval(width);
        for (int t = 0; t < valid; ++t) {
            const int r = box_row(t == 0 ? j : pat[t - 1]);
            if (r < 0) continue;
            for (int c = 0; c < n; ++c) {
                for (int e = 0; e < n; ++e) {
                    out.J.lower(e, r * n + c) += flow.J.lower(e, t * n + c);
                    out.J.upper(e, r * n + c) += flow.J.upper(e, t * n + c);
                }
                out.grad_h.lower[r * n + c] += gh.lower[t * n + c];
                out.grad_h.upper[r * n + c] += gh.upper[t * n + c];
            }
        }
    };
    const auto pats = all_patterns(topo, j);
    for (const auto& pat : pats) visit(pat, true);
    if (out.patterns == 0) {
        for (const auto& pat : pats) visit(pat, false);
        out.patterns = 2;  // unfiltered hull: no single pattern
    }
    return out;
}

Range coupling(const Mat& c, int i, const std::vector<int>& pattern, Range own, const std::vector<Range>& others) {
    Range s = c(i, i) * own;
    for (std::size_t k = 0; k < pattern.size(); ++k) s += c(i, pattern[k]) * others[k];
    return s;
}

/// (phi(x + T d) - phi(x)) / T enclosed twice: directly and by the mean value
/// theorem on the segment hull; the intersection is returned.
template <class Phi>
Range difference_quotient(const Phi& phi, const Interval& x, const Interval& d, double T) {
    const Interval next = add(x, scale(T, d));
    const Range now = phi.bounds(x);
    const Range direct = (1.0 / T) * (phi.bounds(next) - now);
    const Range mean = dot(phi.gradient_bounds(x.hull(next)), d);
    const Range r = intersect(direct, mean);
    return r.valid() ? r : mean;
}

}  // namespace

namespace {

Range natural_bound(const VerificationQuery& query, const VerifierContext& ctx, const Interval& box) {
    const Scenario& sc = *ctx.scenario;
    const CoRwaCertificate& cert = *ctx.cert;
    const int i = query.agent;
    const int n = sc.n();
    const Problem p{query, ctx, sc, cert, n};
    const int valid = 1 + static_cast<int>(query.pattern.size());
    const Interval own = box.segment(0, n);

    switch (query.tag) {
        case ConditionTag::lyap_positive: return -cert.V[i].bounds(own);
        case ConditionTag::barrier_safe_positive:
            return -cert.h[i].bounds(padded(box, sc.topo.extended_dim(i))) + cert.slacks.eps0;
        case ConditionTag::barrier_unsafe_negative: return cert.h[i].bounds(padded(box, sc.topo.extended_dim(i)));
        case ConditionTag::lyap_decrement: {
            const Interval xbar = padded(box, sc.topo.extended_dim(i));
            const Interval F = closed_loop_bounds(ctx, i, xbar, valid);
            const Range quotient = difference_quotient(cert.V[i], own, F, query.T);
            std::vector<Range> vj;
            for (std::size_t k = 0; k < query.pattern.size(); ++k) {
                const int j = query.pattern[k];
                vj.push_back(cert.is_active(j) ? cert.V[j].bounds(box.segment(static_cast<int>(k + 1) * n, n))
                                               : Range::point(0.0));
            }
            const Range c = coupling(cert.Lambda, i, query.pattern, cert.V[i].bounds(own), vj);
            return quotient - c + query.margin;
        }
        case ConditionTag::barrier_increment: {
            const int width = sc.topo.extended_dim(i);
            const Interval xbar = padded(box, width);
            Interval D(width);
            D.set_segment(0, closed_loop_bounds(ctx, i, xbar, valid));
            std::vector<Range> hj;
            for (std::size_t k = 0; k < query.pattern.size(); ++k) {
                const Hop hop = neighbor_hop(p, box, query.pattern[k], false);
                D.set_segment(static_cast<int>(k + 1) * n, hop.F);
                hj.push_back(hop.h);
            }
            const Range quotient = difference_quotient(cert.h[i], xbar, D, query.T);
            const Range c = coupling(cert.Upsilon, i, query.pattern, cert.h[i].bounds(xbar), hj);
            return -(quotient - c) + query.margin;
        }
    }
    return {};
}

Range dot_rows(const IntervalMatrix& m, int row, const Interval& v) {
    Range s{0.0, 0.0};
    for (int c = 0; c < v.size(); ++c) s += m(row, c) * v[c];
    return s;
}

/// Interval enclosure of d residual / d box over the box, or nullopt when the
/// residual is not differentiable enough there for the mean value form.
std::optional<Interval> residual_slope(const VerificationQuery& query, const VerifierContext& ctx,
                                       const Interval& box) {
    const Scenario& sc = *ctx.scenario;
    const CoRwaCertificate& cert = *ctx.cert;
    const int i = query.agent;
    const int n = sc.n();
    const int width = box.size();
    const int wbar = sc.topo.extended_dim(i);
    const int valid = 1 + static_cast<int>(query.pattern.size());
    const Interval own = box.segment(0, n);
    const Interval xbar = padded(box, wbar);
    Interval slope(width);
    switch (query.tag) {
        case ConditionTag::lyap_positive: {
            const Interval g = cert.V[i].gradient_bounds(own);
            for (int d = 0; d < n; ++d) slope.set(d, -g[d]);
            return slope;
        }
        case ConditionTag::barrier_safe_positive:
        case ConditionTag::barrier_unsafe_negative: {
            const Interval g = cert.h[i].gradient_bounds(xbar);
            const double sign = query.tag == ConditionTag::barrier_unsafe_negative ? 1.0 : -1.0;
            for (int d = 0; d < width; ++d) slope.set(d, sign * g[d]);
            return slope;
        }
        case ConditionTag::lyap_decrement: {
            if (!cert.V[i].smooth()) return std::nullopt;
            const Flow flow = closed_loop_flow(ctx, i, xbar, valid);
            const Interval next = add(own, scale(query.T, flow.F));
            const Interval g_next = cert.V[i].gradient_bounds(next);
            const IntervalMatrix hess = cert.V[i].hessian_bounds(own.hull(next));
            const Interval g_own = cert.V[i].gradient_bounds(own);
            for (int d = 0; d < width; ++d) {
                Range s{0.0, 0.0};
                for (int r = 0; r < n; ++r) s += g_next[r] * flow.J(r, d);
                if (d < n) s += dot_rows(hess, d, flow.F) - cert.Lambda(i, i) * g_own[d];
                slope.set(d, s);
            }
            for (std::size_t k = 0; k < query.pattern.size(); ++k) {
                const int j = query.pattern[k];
                if (!cert.is_active(j)) continue;
                const int off = static_cast<int>(k + 1) * n;
                const Interval gj = cert.V[j].gradient_bounds(box.segment(off, n));
                for (int c = 0; c < n; ++c) slope.set(off + c, slope[off + c] - cert.Lambda(i, j) * gj[c]);
            }
            return slope;
        }
        case ConditionTag::barrier_increment: {
            if (!cert.h[i].smooth()) return std::nullopt;
            const Problem p{query, ctx, sc, cert, n};
            const Flow flow = closed_loop_flow(ctx, i, xbar, valid);
            Interval D(wbar);
            IntervalMatrix JD = IntervalMatrix::point(Mat::Zero(wbar, width));
            D.set_segment(0, flow.F);
            for (int r = 0; r < n; ++r)
                for (int d = 0; d < width; ++d) {
                    JD.lower(r, d) = flow.J.lower(r, d);
                    JD.upper(r, d) = flow.J.upper(r, d);
                }
            Interval coup_grad(width);
            for (std::size_t k = 0; k < query.pattern.size(); ++k) {
                const int j = query.pattern[k];
                const Hop hop = neighbor_hop(p, box, j, true);
                if (hop.patterns != 1) return std::nullopt;
                const int off = static_cast<int>(k + 1) * n;
                D.set_segment(off, hop.F);
                for (int r = 0; r < n; ++r)
                    for (int d = 0; d < width; ++d) {
                        JD.lower(off + r, d) = hop.J.lower(r, d);
                        JD.upper(off + r, d) = hop.J.upper(r, d);
                    }
                coup_grad = add(coup_grad, scale(cert.Upsilon(i, j), hop.grad_h));
            }
            const Interval next = add(xbar, scale(query.T, D));
            const Interval g_next = cert.h[i].gradient_bounds(next);
            const IntervalMatrix hess = cert.h[i].hessian_bounds(xbar.hull(next));
            const Interval g_now = cert.h[i].gradient_bounds(xbar);
            for (int d = 0; d < width; ++d) {
                Range dq{0.0, 0.0};
                for (int e = 0; e < wbar; ++e) dq += g_next[e] * JD(e, d);
                dq += dot_rows(hess, d, D);
                const Range dc = cert.Upsilon(i, i) * g_now[d] + coup_grad[d];
                slope.set(d, -(dq - dc));
            }
            return slope;
        }
    }
    return std::nullopt;
}

}  // namespace

Range condition_residual_bound(const VerificationQuery& query, const VerifierContext& ctx, const Interval& input) {
    const Scenario& sc = *ctx.scenario;
    Interval box = input;
    if (!tighten_to_pattern(sc.topo, sc.model.state_domain, query.agent, query.pattern, box))
        throw Error("verifier: neighbor pattern inconsistent with the box");
    const Range natural = natural_bound(query, ctx, box);
    if (!query.centered || (box.upper - box.lower).maxCoeff() <= 0.0) return natural;
    const auto slope = residual_slope(query, ctx, box);
    if (!slope) return natural;
    // r(X) lies in r(c) + r'(X) (X - c)
    const Vec c = box.center();
    Range centered = natural_bound(query, ctx, Interval::point(c));
    for (int d = 0; d < box.size(); ++d) centered += (*slope)[d] * Range{box.lower[d] - c[d], box.upper[d] - c[d]};
    const Range r = intersect(natural, centered);
    return r.valid() ? r : natural;
}

// ---------------------------------------------------------------- concrete side

std::optional<JointState> realize(const VerificationQuery& query, const VerifierContext& ctx, const Vec& point) {
    const Scenario& sc = *ctx.scenario;
    const int n = sc.n();
    const int i = query.agent;
    JointState js;
    js.x = Mat::Zero(sc.q(), n);
    std::vector<int> placed(sc.q(), 0);
    js.x.row(i) = point.segment(0, n).transpose();
    placed[i] = 1;
    for (std::size_t k = 0; k < query.pattern.size(); ++k) {
        js.x.row(query.pattern[k]) = point.segment(static_cast<int>(k + 1) * n, n).transpose();
        placed[query.pattern[k]] = 1;
    }
    // Everyone else goes to the domain corner (over the position slice) farthest from agent i.
    const auto& slice = sc.topo.position_slice;
    for (int a = 0; a < sc.q(); ++a) {
        if (placed[a]) continue;
        const Interval& dom = sc.model.state_domain[a];
        Vec best = dom.center();
        double best_d = -1.0;
        const int corners = 1 << slice.size();
        for (int c = 0; c < corners; ++c) {
            Vec cand = dom.center();
            double d2 = 0.0;
            for (std::size_t s = 0; s < slice.size(); ++s) {
                const int col = slice[s];
                cand[col] = (c >> s) & 1 ? dom.upper[col] : dom.lower[col];
                const double diff = cand[col] - point[col];
                d2 += diff * diff;
            }
            if (d2 > best_d) {
                best_d = d2;
                best = cand;
            }
        }
        js.x.row(a) = best.transpose();
    }
    if (neighbor_set(js, sc.topo, i) != query.pattern) return std::nullopt;
    return js;
}

bool violates(ConditionTag tag, double residual) {
    if (std::isnan(residual)) return true;
    return tag == ConditionTag::barrier_unsafe_negative ? residual >= 0.0 : residual > 0.0;
}

std::optional<double> concrete_residual(const VerificationQuery& query, const VerifierContext& ctx,
                                        const JointState& joint) {
    const Scenario& sc = *ctx.scenario;
    const CoRwaCertificate& cert = *ctx.cert;
    const int i = query.agent;
    const int n = sc.n();
    const ExtendedState e = extended_state(joint, sc.topo, i);
    const Vec xbar = e.flat();
    const AgentSets& sets = sc.sets[i];
    const DerivativeSource src{&sc, &surrogate_of(ctx)};
    switch (query.tag) {
        case ConditionTag::lyap_positive: return -cert.V[i].value(joint.x.row(i).transpose());
        case ConditionTag::barrier_safe_positive:
            if (!sets.initial.contains(xbar, n, e.valid_rows) && !sets.goal.contains(xbar, n, e.valid_rows))
                return std::nullopt;
            return cert.slacks.eps0 - cert.h[i].value(xbar);
        case ConditionTag::barrier_unsafe_negative:
            if (!sets.unsafe.contains(xbar, n, e.valid_rows)) return std::nullopt;
            return cert.h[i].value(xbar);
        case ConditionTag::lyap_decrement:
            if (sets.goal.contains(xbar, n, e.valid_rows)) return std::nullopt;
            return clf_residual_discrete(cert, src, joint, i, query.T) + query.margin;
        case ConditionTag::barrier_increment:
            return -cbf_residual_discrete(cert, src, joint, i, query.T) + query.margin;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- branch and bound

namespace {

/// Where the condition has to hold; inside means "applies on the whole box".
Containment applicability(const VerificationQuery& q, const Scenario& sc, const Interval& box) {
    const int n = sc.n();
    const int valid = 1 + static_cast<int>(q.pattern.size());
    const AgentSets& sets = sc.sets[q.agent];
    switch (q.tag) {
        case ConditionTag::lyap_decrement: {
            const Containment g = sets.goal.classify(box, n, valid);
            return g == Containment::inside ? Containment::outside
                   : g == Containment::outside ? Containment::inside
                                               : Containment::partial;
        }
        case ConditionTag::barrier_safe_positive: {
            const Containment a = sets.initial.classify(box, n, valid);
            const Containment b = sets.goal.classify(box, n, valid);
            if (a == Containment::inside || b == Containment::inside) return Containment::inside;
            if (a == Containment::outside && b == Containment::outside) return Containment::outside;
            return Containment::partial;
        }
        case ConditionTag::barrier_unsafe_negative: return sets.unsafe.classify(box, n, valid);
        default: return Containment::inside;
    }
}

bool proven(ConditionTag tag, const Range& r) {
    return tag == ConditionTag::barrier_unsafe_negative ? r.hi < 0.0 : r.hi <= 0.0;
}

struct Node {
    Interval box;
    int depth;
};

}  // namespace

VerificationOutcome verify_box(const VerificationQuery& query, const VerifierContext& ctx) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const Scenario& sc = *ctx.scenario;
    const VerificationBudget& budget = query.budget;
    constexpr std::size_t kUnresolvedCap = 16;

    if (budget.max_boxes < 1 || budget.max_witnesses < 1 || budget.max_depth < 0)
        throw ConfigError("verify_box: budget must be positive");
    VerificationOutcome out;
    out.query = query;
    bool open = false;

    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };
    auto note_unresolved = [&](const Interval& box) {
        open = true;
        if (out.unresolved.size() >= kUnresolvedCap) return;
        if (auto js = realize(query, ctx, box.center())) out.unresolved.push_back(*js);
    };
    // Bound of a box already tightened; -inf when the condition cannot apply there.
    auto bound = [&](Interval& box) -> Range {
        const double ninf = -std::numeric_limits<double>::infinity();
        if (!tighten_to_pattern(sc.topo, sc.model.state_domain, query.agent, query.pattern, box)) return {ninf, ninf};
        if (applicability(query, sc, box) == Containment::outside) return {ninf, ninf};
        return condition_residual_bound(query, ctx, box);
    };

    std::vector<Node> stack{{query.box, 0}};
    while (!stack.empty()) {
        if (out.boxes >= budget.max_boxes || (budget.max_seconds > 0.0 && elapsed() > budget.max_seconds)) {
            for (const auto& node : stack) note_unresolved(node.box);
            break;
        }
        Node node = std::move(stack.back());
        stack.pop_back();
        ++out.boxes;
        out.depth = std::max(out.depth, node.depth);

        const Range r = bound(node.box);
        if (proven(query.tag, r)) continue;

        if (auto js = realize(query, ctx, node.box.center())) {
            if (auto res = concrete_residual(query, ctx, *js); res && violates(query.tag, *res)) {
                out.witnesses.push_back({*js, query.agent, query.tag, *res});
                if (static_cast<int>(out.witnesses.size()) >= budget.max_witnesses) break;
                continue;
            }
        }
        if (node.depth >= budget.max_depth) {
            note_unresolved(node.box);
            continue;
        }

        int dim = node.box.widest_dimension();
        if (budget.split == SplitRule::best) {
            double best = std::numeric_limits<double>::infinity();
            for (int d = 0; d < node.box.size(); ++d) {
                if (node.box.upper[d] - node.box.lower[d] <= 1e-12) continue;
                auto [a, b] = node.box.bisect(d);
                const double score = std::max(bound(a).hi, bound(b).hi);
                if (score < best) {
                    best = score;
                    dim = d;
                }
            }
        }
        if (node.box.upper[dim] - node.box.lower[dim] <= 0.0) {
            note_unresolved(node.box);
            continue;
        }
        auto [a, b] = node.box.bisect(dim);
        stack.push_back({std::move(b), node.depth + 1});
        stack.push_back({std::move(a), node.depth + 1});
    }

    out.status = !out.witnesses.empty() ? VerificationStatus::counterexample
                 : open                 ? VerificationStatus::unknown
                                        : VerificationStatus::verified;
    out.seconds = elapsed();
    return out;
}

// ---------------------------------------------------------------- agents

json VerifierConfig::to_json() const {
    json conds = json::array();
    for (auto c : conditions) conds.push_back(to_string(c));
    return {{"T", T},
            {"budget", budget.to_json()},
            {"retry_unknown", retry_unknown},
            {"centered", centered},
            {"conditions", conds}};
}

VerifierConfig VerifierConfig::from_json(const json& j) {
    VerifierConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "T") c.T = v.get<double>();
        else if (key == "budget") c.budget = VerificationBudget::from_json(v);
        else if (key == "retry_unknown") c.retry_unknown = v.get<bool>();
        else if (key == "centered") c.centered = v.get<bool>();
        else if (key == "conditions") {
            c.conditions.clear();
            for (const auto& s : v) c.conditions.push_back(condition_from_string(s.get<std::string>()));
        } else
            throw ConfigError("unknown verifier key '" + key + "'");
    }
    if (c.T < 0.0) throw ConfigError("verifier.T must be >= 0");
    return c;
}

std::vector<VerificationQuery> agent_queries(const VerifierContext& ctx, int i, const VerifierConfig& cfg) {
    const Scenario& sc = *ctx.scenario;
    const CoRwaCertificate& cert = *ctx.cert;
    std::vector<VerificationQuery> out;
    if (!cert.is_active(i)) return out;
    const auto& domains = sc.model.state_domain;
    const auto patterns = feasible_patterns(sc.topo, i, domains);
    const AgentSets& sets = sc.sets[i];

    VerificationQuery base;
    base.agent = i;
    base.T = cfg.T > 0.0 ? cfg.T : sc.dt;
    base.budget = cfg.budget;
    base.centered = cfg.centered;
    for (ConditionTag tag : cfg.conditions) {
        base.tag = tag;
        base.margin = 0.0;
        if (tag == ConditionTag::lyap_decrement && static_cast<int>(cert.eV.size()) > i) base.margin = cert.eV[i];
        if (tag == ConditionTag::barrier_increment && static_cast<int>(cert.eh.size()) > i) base.margin = cert.eh[i];
        if (tag == ConditionTag::lyap_positive) {
            VerificationQuery q = base;
            q.box = domains[i];
            out.push_back(q);
            continue;
        }
        Interval own = domains[i];
        if (tag == ConditionTag::barrier_safe_positive) {
            if (sets.initial.is_empty() && sets.goal.is_empty()) continue;
            own = Region::unite({sets.initial, sets.goal}).bounding_box(domains[i]);
        } else if (tag == ConditionTag::barrier_unsafe_negative) {
            if (sets.unsafe.is_empty()) continue;
            own = sets.unsafe.bounding_box(domains[i]);
        }
        if (!own.valid()) continue;
        for (const auto& pat : patterns) {
            std::vector<Interval> rows{own};
            for (int a : pat) rows.push_back(domains[a]);
            VerificationQuery q = base;
            q.pattern = pat;
            q.box = stack_rows(rows);
            out.push_back(q);
        }
    }
    return out;
}

namespace {

VerificationOutcome run_query(const VerificationQuery& q, const VerifierContext& ctx, bool retry) {
    VerificationOutcome o = verify_box(q, ctx);
    if (retry && o.status == VerificationStatus::unknown) {
        VerificationQuery bigger = q;
        bigger.budget = q.budget.doubled();
        o = verify_box(bigger, ctx);
    }
    return o;
}

}  // namespace

AgentVerification verify_agent(const VerifierContext& ctx, int i, const VerifierConfig& cfg) {
    AgentVerification av;
    av.agent = i;
    const auto queries = agent_queries(ctx, i, cfg);
    av.outcomes.resize(queries.size());
    parallel_for(static_cast<int>(queries.size()),
                 [&](int k) { av.outcomes[k] = run_query(queries[k], ctx, cfg.retry_unknown); });
    for (const auto& o : av.outcomes) av.verdict = combine(av.verdict, o.status);
    return av;
}

VerificationReport verify_all(const VerifierContext& ctx, const VerifierConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const Scenario& sc = *ctx.scenario;
    std::vector<VerificationQuery> queries;
    std::vector<int> owner;
    VerificationReport rep;
    for (int i = 0; i < sc.q(); ++i) {
        if (!ctx.cert->is_active(i)) continue;
        AgentVerification av;
        av.agent = i;
        rep.agents.push_back(av);
        for (auto& q : agent_queries(ctx, i, cfg)) {
            queries.push_back(std::move(q));
            owner.push_back(static_cast<int>(rep.agents.size()) - 1);
        }
    }
    std::vector<VerificationOutcome> outcomes(queries.size());
    parallel_for(static_cast<int>(queries.size()),
                 [&](int k) { outcomes[k] = run_query(queries[k], ctx, cfg.retry_unknown); });
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
        AgentVerification& av = rep.agents[owner[k]];
        av.verdict = combine(av.verdict, outcomes[k].status);
        av.outcomes.push_back(std::move(outcomes[k]));
    }
    for (const auto& av : rep.agents) rep.verdict = combine(rep.verdict, av.verdict);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

std::vector<Witness> VerificationReport::witnesses() const {
    std::vector<Witness> out;
    for (const auto& av : agents)
        for (const auto& o : av.outcomes) out.insert(out.end(), o.witnesses.begin(), o.witnesses.end());
    return out;
}

std::vector<JointState> VerificationReport::unresolved() const {
    std::vector<JointState> out;
    for (const auto& av : agents)
        for (const auto& o : av.outcomes) out.insert(out.end(), o.unresolved.begin(), o.unresolved.end());
    return out;
}

json VerificationReport::to_json() const {
    json ag = json::array();
    for (const auto& av : agents) {
        json outs = json::array();
        for (const auto& o : av.outcomes) outs.push_back(o.to_json());
        ag.push_back({{"agent", av.agent}, {"verdict", to_string(av.verdict)}, {"queries", outs}});
    }
    return {{"verdict", to_string(verdict)}, {"seconds", seconds}, {"agents", ag}};
}

}  // namespace corwa
