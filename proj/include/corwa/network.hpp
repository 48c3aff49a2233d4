#pragma once

#include "corwa/interval.hpp"

#include <json.hpp>

#include <random>
#include <string>
#include <vector>

namespace corwa {

enum class Activation { relu, tanh, softplus, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
    Mat weight;  // out x in
    Vec bias;
    Activation activation = Activation::identity;
};

/// Dense feed-forward network. Parameters flatten layer by layer as
/// weight (row-major) followed by bias.
class FeedForwardNet {
public:
    FeedForwardNet() = default;
    explicit FeedForwardNet(std::vector<DenseLayer> layers);

    /// sizes = {in, hidden..., out}; hidden layers use `hidden`, the last layer `output`.
    static FeedForwardNet random(const std::vector<int>& sizes, Activation hidden, Activation output,
                                 std::mt19937_64& rng);

    int input_dim() const;
    int output_dim() const;
    bool empty() const { return layers_.empty(); }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    Vec forward(const Vec& x) const;

    /// Values kept from a forward pass for reverse-mode differentiation.
    struct Trace {
        std::vector<Vec> inputs;  // input to each layer
        std::vector<Vec> pre;     // pre-activation of each layer
    };
    Vec forward(const Vec& x, Trace& trace) const;

    /// Pulls `upstream` (d loss / d output) back through the traced pass.
    /// Adds the parameter gradient into `param_grad` (if non-null, sized
    /// num_parameters()) and returns d loss / d input.
    Vec backward(const Trace& trace, const Vec& upstream, Vec* param_grad = nullptr) const;

    /// Jacobian d output / d input at x (output_dim x input_dim).
    Mat input_gradient(const Vec& x) const;
    /// Flat parameter gradient of upstream . output at x.
    Vec param_gradient(const Vec& x, const Vec& upstream) const;

    Interval interval_bounds(const Interval& box) const;
    /// Entrywise enclosure of the Jacobian over the box.
    IntervalMatrix jacobian_bounds(const Interval& box) const;
    /// Both at once (shares the forward sweep).
    std::pair<Interval, IntervalMatrix> bounds_with_jacobian(const Interval& box) const;

    /// Value, Jacobian and per-output Hessian enclosures over the box.
    /// Needs twice-differentiable activations (see smooth()).
    struct SecondOrder {
        Interval value;
        IntervalMatrix jacobian;
        std::vector<IntervalMatrix> hessian;  // input x input, one per output
    };
    SecondOrder second_order_bounds(const Interval& box) const;
    /// No relu layers.
    bool smooth() const;

    /// Product of layer spectral norms.
    double lipschitz_upper() const;

    int num_parameters() const;
    Vec parameters() const;
    void set_parameters(const Vec& p);

    nlohmann::json to_json() const;
    static FeedForwardNet from_json(const nlohmann::json& j);

private:
    std::vector<DenseLayer> layers_;
};

/// Largest singular value by power iteration on W^T W.
double spectral_norm(const Mat& w, double tol = 1e-9, int max_iter = 20000);

/// Activation value, derivative and interval images.
double activate(Activation a, double z);
double activate_derivative(Activation a, double z);
Range activate(Activation a, Range z);
Range activate_derivative(Activation a, Range z);
/// Second derivative; relu has none and throws.
double activate_second_derivative(Activation a, double z);
Range activate_second_derivative(Activation a, Range z);

double softplus(double z);
double sigmoid(double z);

/// Exact-matrix times interval matrix.
IntervalMatrix multiply(const Mat& m, const IntervalMatrix& x);

}  // namespace corwa
