#include "corwa/interval.hpp"

#include "corwa/errors.hpp"

#include <numbers>

namespace corwa {

namespace {

// sin over [lo, hi]: endpoints plus any interior critical points.
Range trig_range(Range a, double phase) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    if (a.width() >= two_pi) return {-1.0, 1.0};
    const double s_lo = std::sin(a.lo + phase);
    const double s_hi = std::sin(a.hi + phase);
    Range r{std::min(s_lo, s_hi), std::max(s_lo, s_hi)};
    // maxima of sin(t + phase) at t = pi/2 - phase + 2k pi, minima at -pi/2 - phase + 2k pi
    const double max_base = std::numbers::pi / 2.0 - phase;
    const double min_base = -std::numbers::pi / 2.0 - phase;
    const double kmax = std::ceil((a.lo - max_base) / two_pi);
    if (max_base + kmax * two_pi <= a.hi) r.hi = 1.0;
    const double kmin = std::ceil((a.lo - min_base) / two_pi);
    if (min_base + kmin * two_pi <= a.hi) r.lo = -1.0;
    return r;
}

}  // namespace

Range sin(Range a) { return trig_range(a, 0.0); }
Range cos(Range a) { return trig_range(a, std::numbers::pi / 2.0); }

Interval Interval::from_ranges(const std::vector<Range>& r) {
    Interval out(static_cast<int>(r.size()));
    for (int i = 0; i < out.size(); ++i) out.set(i, r[i]);
    return out;
}

bool Interval::valid() const {
    if (lower.size() != upper.size()) return false;
    for (int i = 0; i < size(); ++i) {
        if (!(lower[i] <= upper[i])) return false;
    }
    return true;
}

int Interval::widest_dimension() const {
    int best = 0;
    double w = -1.0;
    for (int i = 0; i < size(); ++i) {
        const double wi = upper[i] - lower[i];
        if (wi > w) {
            w = wi;
            best = i;
        }
    }
    return best;
}

bool Interval::contains(const Vec& x, double tol) const {
    if (x.size() != lower.size()) return false;
    for (int i = 0; i < size(); ++i) {
        if (x[i] < lower[i] - tol || x[i] > upper[i] + tol) return false;
    }
    return true;
}

bool Interval::contains(const Interval& o) const {
    if (o.size() != size()) return false;
    for (int i = 0; i < size(); ++i) {
        if (o.lower[i] < lower[i] || o.upper[i] > upper[i]) return false;
    }
    return true;
}

std::pair<Interval, Interval> Interval::bisect(int dim) const {
    Interval a = *this, b = *this;
    const double m = 0.5 * (lower[dim] + upper[dim]);
    a.upper[dim] = m;
    b.lower[dim] = m;
    return {std::move(a), std::move(b)};
}

Interval Interval::hull(const Interval& o) const {
    return {lower.cwiseMin(o.lower), upper.cwiseMax(o.upper)};
}

Interval Interval::segment(int offset, int len) const {
    return {lower.segment(offset, len), upper.segment(offset, len)};
}

void Interval::set_segment(int offset, const Interval& part) {
    lower.segment(offset, part.size()) = part.lower;
    upper.segment(offset, part.size()) = part.upper;
}

Interval Interval::inflated(double eps) const {
    return {lower.array() - eps, upper.array() + eps};
}

Interval multiply(const Mat& m, const Interval& x) {
    if (m.cols() != x.size()) throw DimensionError("interval multiply: shape mismatch");
    const Mat pos = m.cwiseMax(0.0);
    const Mat neg = m.cwiseMin(0.0);
    return {pos * x.lower + neg * x.upper, pos * x.upper + neg * x.lower};
}

Interval multiply(const IntervalMatrix& m, const Interval& x) {
    if (m.cols() != x.size()) throw DimensionError("interval matrix multiply: shape mismatch");
    Interval out(m.rows());
    for (int r = 0; r < m.rows(); ++r) {
        Range acc{0.0, 0.0};
        for (int c = 0; c < m.cols(); ++c) acc += m(r, c) * x[c];
        out.set(r, acc);
    }
    return out;
}

Range dot(const Interval& a, const Interval& b) {
    if (a.size() != b.size()) throw DimensionError("interval dot: size mismatch");
    Range acc{0.0, 0.0};
    for (int i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Interval add(const Interval& a, const Interval& b) {
    if (a.size() != b.size()) throw DimensionError("interval add: size mismatch");
    return {a.lower + b.lower, a.upper + b.upper};
}

Interval scale(double c, const Interval& a) {
    if (c >= 0.0) return {c * a.lower, c * a.upper};
    return {c * a.upper, c * a.lower};
}

double norm_upper(const Interval& x) {
    double s = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        const double m = std::max(std::abs(x.lower[i]), std::abs(x.upper[i]));
        s += m * m;
    }
    return std::sqrt(s);
}

}  // namespace corwa
