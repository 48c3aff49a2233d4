#include "corwa/network.hpp"

#include "corwa/errors.hpp"

#include <cmath>
#include <limits>

namespace corwa {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::softplus: return "softplus";
        case Activation::identity: return "identity";
    }
    return "identity";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "softplus") return Activation::softplus;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

double softplus(double z) {
    // log(1 + e^z) without overflow
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::softplus: return softplus(z);
        case Activation::identity: return z;
    }
    return z;
}

double activate_derivative(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::softplus: return sigmoid(z);
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

Range activate(Activation a, Range z) {
    // all activations are monotone nondecreasing
    return {activate(a, z.lo), activate(a, z.hi)};
}

Range activate_derivative(Activation a, Range z) {
    switch (a) {
        case Activation::relu:
            if (z.lo > 0.0) return {1.0, 1.0};
            if (z.hi <= 0.0) return {0.0, 0.0};
            return {0.0, 1.0};
        case Activation::tanh: {
            const double far = std::max(std::abs(z.lo), std::abs(z.hi));
            const double near = z.contains(0.0) ? 0.0 : std::min(std::abs(z.lo), std::abs(z.hi));
            return {activate_derivative(a, far), activate_derivative(a, near)};
        }
        case Activation::softplus: return {sigmoid(z.lo), sigmoid(z.hi)};
        case Activation::identity: return {1.0, 1.0};
    }
    return {1.0, 1.0};
}

double activate_second_derivative(Activation a, double z) {
    switch (a) {
        case Activation::relu: throw DimensionError("relu has no second derivative");
        case Activation::tanh: {
            const double t = std::tanh(z);
            return -2.0 * t * (1.0 - t * t);
        }
        case Activation::softplus: {
            const double s = sigmoid(z);
            return s * (1.0 - s);
        }
        case Activation::identity: return 0.0;
    }
    return 0.0;
}

Range activate_second_derivative(Activation a, Range z) {
    switch (a) {
        case Activation::relu: throw DimensionError("relu has no second derivative");
        case Activation::tanh: {
            // -2t(1 - t^2) over t = tanh(z), stationary at t = +-1/sqrt(3)
            const double t0 = std::tanh(z.lo), t1 = std::tanh(z.hi);
            auto g = [](double t) { return -2.0 * t * (1.0 - t * t); };
            Range r = Range::point(g(t0)).hull(g(t1));
            const double c = 1.0 / std::sqrt(3.0);
            if (t0 <= c && c <= t1) r = r.hull(g(c));
            if (t0 <= -c && -c <= t1) r = r.hull(g(-c));
            return r;
        }
        case Activation::softplus: {
            const double s0 = sigmoid(z.lo), s1 = sigmoid(z.hi);
            Range r = Range::point(s0 * (1.0 - s0)).hull(s1 * (1.0 - s1));
            if (s0 <= 0.5 && 0.5 <= s1) r = r.hull(0.25);
            return r;
        }
        case Activation::identity: return {0.0, 0.0};
    }
    return {0.0, 0.0};
}

IntervalMatrix multiply(const Mat& m, const IntervalMatrix& x) {
    if (m.cols() != x.rows()) throw DimensionError("interval matrix product: shape mismatch");
    const Mat pos = m.cwiseMax(0.0);
    const Mat neg = m.cwiseMin(0.0);
    return {pos * x.lower + neg * x.upper, pos * x.upper + neg * x.lower};
}

FeedForwardNet::FeedForwardNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto& l = layers_[k];
        if (l.bias.size() != l.weight.rows())
            throw DimensionError("layer " + std::to_string(k) + ": bias does not match weight rows");
        if (k > 0 && l.weight.cols() != layers_[k - 1].weight.rows())
            throw DimensionError("layer " + std::to_string(k) + ": input size does not chain");
        if (!l.weight.allFinite() || !l.bias.allFinite())
            throw DimensionError("layer " + std::to_string(k) + ": non-finite parameters");
    }
}

FeedForwardNet FeedForwardNet::random(const std::vector<int>& sizes, Activation hidden,
                                      Activation output, std::mt19937_64& rng) {
    if (sizes.size() < 2) throw ConfigError("network needs at least input and output sizes");
    std::vector<DenseLayer> layers;
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
        const int in = sizes[k], out = sizes[k + 1];
        if (in <= 0 || out <= 0) throw ConfigError("network layer sizes must be positive");
        const double a = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> u(-a, a);
        DenseLayer l;
        l.weight.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) l.weight(r, c) = u(rng);
        l.bias = Vec::Zero(out);
        l.activation = (k + 2 == sizes.size()) ? output : hidden;
        layers.push_back(std::move(l));
    }
    return FeedForwardNet(std::move(layers));
}

int FeedForwardNet::input_dim() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int FeedForwardNet::output_dim() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

Vec FeedForwardNet::forward(const Vec& x) const {
    if (x.size() != input_dim())
        throw DimensionError("forward: input has size " + std::to_string(x.size()) + ", expected " +
                             std::to_string(input_dim()));
    Vec h = x;
    for (const auto& l : layers_) {
        Vec z = l.weight * h + l.bias;
        if (l.activation != Activation::identity)
            for (int r = 0; r < z.size(); ++r) z[r] = activate(l.activation, z[r]);
        h = std::move(z);
    }
    return h;
}

Vec FeedForwardNet::forward(const Vec& x, Trace& trace) const {
    if (x.size() != input_dim()) throw DimensionError("forward: input size mismatch");
    trace.inputs.resize(layers_.size());
    trace.pre.resize(layers_.size());
    Vec h = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto& l = layers_[k];
        trace.inputs[k] = h;
        trace.pre[k] = l.weight * h + l.bias;
        h = trace.pre[k];
        if (l.activation != Activation::identity)
            for (int r = 0; r < h.size(); ++r) h[r] = activate(l.activation, h[r]);
    }
    return h;
}

Vec FeedForwardNet::backward(const Trace& trace, const Vec& upstream, Vec* param_grad) const {
    if (upstream.size() != output_dim()) throw DimensionError("backward: cotangent size mismatch");
    if (param_grad && param_grad->size() != num_parameters())
        throw DimensionError("backward: gradient buffer size mismatch");
    Vec g = upstream;
    int offset = num_parameters();
    for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
        const auto& l = layers_[k];
        const int rows = static_cast<int>(l.weight.rows()), cols = static_cast<int>(l.weight.cols());
        if (l.activation != Activation::identity)
            for (int r = 0; r < rows; ++r) g[r] *= activate_derivative(l.activation, trace.pre[k][r]);
        offset -= rows * cols + rows;
        if (param_grad) {
            double* p = param_grad->data() + offset;
            const Vec& in = trace.inputs[k];
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) p[r * cols + c] += g[r] * in[c];
            for (int r = 0; r < rows; ++r) p[rows * cols + r] += g[r];
        }
        g = l.weight.transpose() * g;
    }
    return g;
}

Mat FeedForwardNet::input_gradient(const Vec& x) const {
    Trace t;
    forward(x, t);
    Mat jac = Mat::Identity(input_dim(), input_dim());
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto& l = layers_[k];
        Mat next = l.weight * jac;
        if (l.activation != Activation::identity)
            for (int r = 0; r < next.rows(); ++r)
                next.row(r) *= activate_derivative(l.activation, t.pre[k][r]);
        jac = std::move(next);
    }
    return jac;
}

Vec FeedForwardNet::param_gradient(const Vec& x, const Vec& upstream) const {
    Trace t;
    forward(x, t);
    Vec grad = Vec::Zero(num_parameters());
    backward(t, upstream, &grad);
    return grad;
}

namespace {

// Floating-point error of the sums and of libm, added outward so that any
// evaluation order of the same layer lands inside the bounds.
Interval affine_bounds(const DenseLayer& l, const Interval& h) {
    Interval z = multiply(l.weight, h);
    z.lower += l.bias;
    z.upper += l.bias;
    const Vec mag = h.lower.cwiseAbs().cwiseMax(h.upper.cwiseAbs());
    const double gamma = 2.0 * (l.weight.cols() + 2) * std::numeric_limits<double>::epsilon();
    const Vec pad = gamma * (l.weight.cwiseAbs() * mag + l.bias.cwiseAbs()).array() +
                    std::numeric_limits<double>::denorm_min();
    z.lower -= pad;
    z.upper += pad;
    return z;
}

Range widen(Activation a, Range r) {
    if (a == Activation::relu || a == Activation::identity) return r;
    for (int k = 0; k < 4; ++k) {
        r.lo = std::nextafter(r.lo, -std::numeric_limits<double>::infinity());
        r.hi = std::nextafter(r.hi, std::numeric_limits<double>::infinity());
    }
    return r;
}

}  // namespace

Interval FeedForwardNet::interval_bounds(const Interval& box) const {
    if (!box.valid()) throw DimensionError("interval_bounds: invalid box");
    if (box.size() != input_dim()) throw DimensionError("interval_bounds: box size mismatch");
    Interval h = box;
    for (const auto& l : layers_) {
        Interval z = affine_bounds(l, h);
        if (l.activation != Activation::identity)
            for (int r = 0; r < z.size(); ++r) z.set(r, widen(l.activation, activate(l.activation, z[r])));
        h = std::move(z);
    }
    return h;
}

std::pair<Interval, IntervalMatrix> FeedForwardNet::bounds_with_jacobian(const Interval& box) const {
    if (!box.valid()) throw DimensionError("jacobian_bounds: invalid box");
    if (box.size() != input_dim()) throw DimensionError("jacobian_bounds: box size mismatch");
    Interval h = box;
    IntervalMatrix jac = IntervalMatrix::point(Mat::Identity(input_dim(), input_dim()));
    for (const auto& l : layers_) {
        Interval z = affine_bounds(l, h);
        IntervalMatrix next = multiply(l.weight, jac);
        if (l.activation != Activation::identity) {
            for (int r = 0; r < z.size(); ++r) {
                const Range d = activate_derivative(l.activation, z[r]);
                for (int c = 0; c < next.cols(); ++c) {
                    const Range e = d * next(r, c);
                    next.lower(r, c) = e.lo;
                    next.upper(r, c) = e.hi;
                }
                z.set(r, widen(l.activation, activate(l.activation, z[r])));
            }
        }
        h = std::move(z);
        jac = std::move(next);
    }
    return {std::move(h), std::move(jac)};
}

bool FeedForwardNet::smooth() const {
    for (const auto& l : layers_)
        if (l.activation == Activation::relu) return false;
    return true;
}

FeedForwardNet::SecondOrder FeedForwardNet::second_order_bounds(const Interval& box) const {
    if (!box.valid()) throw DimensionError("second_order_bounds: invalid box");
    if (box.size() != input_dim()) throw DimensionError("second_order_bounds: box size mismatch");
    if (!smooth()) throw DimensionError("second_order_bounds: network is not twice differentiable");
    const int d = input_dim();
    Interval h = box;
    IntervalMatrix jac = IntervalMatrix::point(Mat::Identity(d, d));
    std::vector<IntervalMatrix> hess(d, IntervalMatrix::point(Mat::Zero(d, d)));
    for (const auto& l : layers_) {
        const int rows = static_cast<int>(l.weight.rows());
        Interval z = affine_bounds(l, h);
        IntervalMatrix jz = multiply(l.weight, jac);
        std::vector<IntervalMatrix> hz(rows, IntervalMatrix::point(Mat::Zero(d, d)));
        for (int r = 0; r < rows; ++r)
            for (int k = 0; k < l.weight.cols(); ++k) {
                const double w = l.weight(r, k);
                if (w > 0.0) {
                    hz[r].lower += w * hess[k].lower;
                    hz[r].upper += w * hess[k].upper;
                } else if (w < 0.0) {
                    hz[r].lower += w * hess[k].upper;
                    hz[r].upper += w * hess[k].lower;
                }
            }
        if (l.activation != Activation::identity) {
            for (int r = 0; r < rows; ++r) {
                const Range d1 = activate_derivative(l.activation, z[r]);
                const Range d2 = activate_second_derivative(l.activation, z[r]);
                // a'' = s''(z) dz dz^T + s'(z) d2z
                for (int p = 0; p < d; ++p)
                    for (int q = p; q < d; ++q) {
                        const Range outer = p == q ? square(jz(r, p)) : jz(r, p) * jz(r, q);
                        const Range e = d2 * outer + d1 * hz[r](p, q);
                        hz[r].lower(p, q) = hz[r].lower(q, p) = e.lo;
                        hz[r].upper(p, q) = hz[r].upper(q, p) = e.hi;
                    }
                for (int c = 0; c < d; ++c) {
                    const Range e = d1 * jz(r, c);
                    jz.lower(r, c) = e.lo;
                    jz.upper(r, c) = e.hi;
                }
                z.set(r, widen(l.activation, activate(l.activation, z[r])));
            }
        }
        h = std::move(z);
        jac = std::move(jz);
        hess = std::move(hz);
    }
    return {std::move(h), std::move(jac), std::move(hess)};
}

IntervalMatrix FeedForwardNet::jacobian_bounds(const Interval& box) const {
    return bounds_with_jacobian(box).second;
}

double spectral_norm(const Mat& w, double tol, int max_iter) {
    if (w.size() == 0) return 0.0;
    const Mat gram = w.transpose() * w;
    Vec v = Vec::Ones(gram.cols()).normalized();
    // a start vector orthogonal to the top singular vector would stall; perturb deterministically
    for (int i = 0; i < v.size(); ++i) v[i] += 1e-3 * (i + 1);
    v.normalize();
    double sigma2 = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vec gv = gram * v;
        const double n = gv.norm();
        if (n == 0.0) return 0.0;
        sigma2 = v.dot(gv);
        const double residual = (gv - sigma2 * v).norm();
        if (residual <= tol * std::max(sigma2, 1e-300)) return std::sqrt(sigma2);
        v = gv / n;
    }
    // slow convergence (clustered singular values): exact decomposition
    Eigen::JacobiSVD<Mat> svd(w);
    return svd.singularValues()(0);
}

double FeedForwardNet::lipschitz_upper() const {
    double l = 1.0;
    for (const auto& layer : layers_) l *= spectral_norm(layer.weight);
    return l;
}

int FeedForwardNet::num_parameters() const {
    int n = 0;
    for (const auto& l : layers_) n += static_cast<int>(l.weight.size() + l.bias.size());
    return n;
}

Vec FeedForwardNet::parameters() const {
    Vec p(num_parameters());
    int o = 0;
    for (const auto& l : layers_) {
        for (int r = 0; r < l.weight.rows(); ++r)
            for (int c = 0; c < l.weight.cols(); ++c) p[o++] = l.weight(r, c);
        for (int r = 0; r < l.bias.size(); ++r) p[o++] = l.bias[r];
    }
    return p;
}

void FeedForwardNet::set_parameters(const Vec& p) {
    if (p.size() != num_parameters()) throw DimensionError("set_parameters: size mismatch");
    int o = 0;
    for (auto& l : layers_) {
        for (int r = 0; r < l.weight.rows(); ++r)
            for (int c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p[o++];
        for (int r = 0; r < l.bias.size(); ++r) l.bias[r] = p[o++];
    }
}

nlohmann::json FeedForwardNet::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
        std::vector<double> w;
        w.reserve(l.weight.size());
        for (int r = 0; r < l.weight.rows(); ++r)
            for (int c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
        layers.push_back({{"in", l.weight.cols()},
                          {"out", l.weight.rows()},
                          {"activation", to_string(l.activation)},
                          {"weight", w},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"format", 1}, {"layers", layers}};
}

FeedForwardNet FeedForwardNet::from_json(const nlohmann::json& j) {
    if (j.value("format", 0) != 1) throw ConfigError("network: unsupported format");
    std::vector<DenseLayer> layers;
    for (const auto& jl : j.at("layers")) {
        const int in = jl.at("in").get<int>(), out = jl.at("out").get<int>();
        const auto w = jl.at("weight").get<std::vector<double>>();
        const auto b = jl.at("bias").get<std::vector<double>>();
        if (static_cast<int>(w.size()) != in * out || static_cast<int>(b.size()) != out)
            throw ConfigError("network: layer arrays do not match declared shape");
        DenseLayer l;
        l.weight.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) l.weight(r, c) = w[r * in + c];
        l.bias = Eigen::Map<const Vec>(b.data(), out);
        l.activation = activation_from_string(jl.at("activation").get<std::string>());
        layers.push_back(std::move(l));
    }
    return FeedForwardNet(std::move(layers));
}

}  // namespace corwa
