#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <utility>
#include <vector>

namespace corwa {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Vec make_vec(std::initializer_list<double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out[k++] = x;
    return out;
}

/// Closed scalar interval [lo, hi].
struct Range {
    double lo = 0.0;
    double hi = 0.0;

    Range() = default;
    Range(double l, double h) : lo(l), hi(h) {}
    static Range point(double v) { return {v, v}; }

    double width() const { return hi - lo; }
    double mid() const { return 0.5 * (lo + hi); }
    double mag() const { return std::max(std::abs(lo), std::abs(hi)); }
    bool contains(double v) const { return lo <= v && v <= hi; }
    bool valid() const { return lo <= hi; }

    Range hull(const Range& o) const { return {std::min(lo, o.lo), std::max(hi, o.hi)}; }
    Range hull(double v) const { return {std::min(lo, v), std::max(hi, v)}; }
};

inline Range operator+(Range a, Range b) { return {a.lo + b.lo, a.hi + b.hi}; }
inline Range operator-(Range a, Range b) { return {a.lo - b.hi, a.hi - b.lo}; }
inline Range operator-(Range a) { return {-a.hi, -a.lo}; }
inline Range operator+(Range a, double c) { return {a.lo + c, a.hi + c}; }
inline Range operator-(Range a, double c) { return {a.lo - c, a.hi - c}; }
inline Range operator*(double c, Range a) {
    return c >= 0.0 ? Range{c * a.lo, c * a.hi} : Range{c * a.hi, c * a.lo};
}
inline Range operator*(Range a, double c) { return c * a; }
inline Range operator*(Range a, Range b) {
    const double p1 = a.lo * b.lo, p2 = a.lo * b.hi, p3 = a.hi * b.lo, p4 = a.hi * b.hi;
    return {std::min({p1, p2, p3, p4}), std::max({p1, p2, p3, p4})};
}
inline Range& operator+=(Range& a, Range b) { return a = a + b; }

inline Range square(Range a) {
    if (a.lo >= 0.0) return {a.lo * a.lo, a.hi * a.hi};
    if (a.hi <= 0.0) return {a.hi * a.hi, a.lo * a.lo};
    return {0.0, std::max(a.lo * a.lo, a.hi * a.hi)};
}

inline Range intersect(Range a, Range b) { return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)}; }

/// Enclosures of sin/cos over an interval argument.
Range sin(Range a);
Range cos(Range a);

/// Axis-aligned box: componentwise lower <= upper.
struct Interval {
    Vec lower;
    Vec upper;

    Interval() = default;
    Interval(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {}
    explicit Interval(int n) : lower(Vec::Zero(n)), upper(Vec::Zero(n)) {}

    static Interval point(const Vec& x) { return {x, x}; }
    static Interval from_ranges(const std::vector<Range>& r);

    int size() const { return static_cast<int>(lower.size()); }
    Range operator[](int i) const { return {lower[i], upper[i]}; }
    void set(int i, Range r) {
        lower[i] = r.lo;
        upper[i] = r.hi;
    }

    bool valid() const;
    Vec center() const { return 0.5 * (lower + upper); }
    Vec width() const { return upper - lower; }
    int widest_dimension() const;
    bool contains(const Vec& x, double tol = 0.0) const;
    bool contains(const Interval& other) const;
    std::pair<Interval, Interval> bisect(int dim) const;

    Interval hull(const Interval& o) const;
    /// Copy of rows [offset, offset+len).
    Interval segment(int offset, int len) const;
    void set_segment(int offset, const Interval& part);
    /// Grow by an absolute amount on both sides (outward rounding guard).
    Interval inflated(double eps) const;
};

/// Interval matrix with entrywise bounds.
struct IntervalMatrix {
    Mat lower;
    Mat upper;

    IntervalMatrix() = default;
    IntervalMatrix(Mat lo, Mat hi) : lower(std::move(lo)), upper(std::move(hi)) {}
    static IntervalMatrix point(const Mat& m) { return {m, m}; }

    int rows() const { return static_cast<int>(lower.rows()); }
    int cols() const { return static_cast<int>(lower.cols()); }
    Range operator()(int r, int c) const { return {lower(r, c), upper(r, c)}; }
    /// Entrywise magnitude bound.
    Mat magnitude() const { return lower.cwiseAbs().cwiseMax(upper.cwiseAbs()); }
};

/// Exact-matrix times interval vector (positive/negative weight split).
Interval multiply(const Mat& m, const Interval& x);
/// Interval matrix times interval vector.
Interval multiply(const IntervalMatrix& m, const Interval& x);
/// Interval dot product.
Range dot(const Interval& a, const Interval& b);
Interval add(const Interval& a, const Interval& b);
Interval scale(double c, const Interval& a);
/// Upper bound on the Euclidean norm of any vector in the box.
double norm_upper(const Interval& x);

}  // namespace corwa
