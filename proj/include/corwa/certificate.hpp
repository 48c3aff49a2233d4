#pragma once

#include "corwa/network.hpp"
#include "corwa/scenario.hpp"

#include <json.hpp>

#include <array>
#include <vector>

namespace corwa {

enum class ScalarForm { raw, positive_definite };

/// Scalar function of a (flattened) state built from a network on
/// normalized input z = (x - shift) / scale.
/// positive_definite: ||N(z) - N(0)||^2 + delta ||z||^2.
struct ScalarCertificate {
    FeedForwardNet net;
    Vec shift;
    Vec scale;
    ScalarForm form = ScalarForm::raw;
    double delta = 1e-3;

    bool empty() const { return net.empty(); }
    int input_dim() const { return static_cast<int>(shift.size()); }
    int num_parameters() const { return net.num_parameters(); }

    double value(const Vec& x) const;
    Vec gradient(const Vec& x) const;

    struct Trace {
        FeedForwardNet::Trace tz, t0;
        Vec z, r;
    };
    double value(const Vec& x, Trace& t) const;
    /// d/dx of upstream * value; adds parameter gradient into param_grad (may be null).
    Vec backward(const Trace& t, double upstream, Vec* param_grad) const;

    Range bounds(const Interval& box) const;
    /// Enclosure of the gradient over the box.
    Interval gradient_bounds(const Interval& box) const;
    /// Both, sharing the network sweep.
    std::pair<Range, Interval> bounds_with_gradient(const Interval& box) const;
    /// Enclosure of the Hessian over the box; the network must be smooth.
    IntervalMatrix hessian_bounds(const Interval& box) const;
    bool smooth() const { return net.smooth(); }

    nlohmann::json to_json() const;
    static ScalarCertificate from_json(const nlohmann::json& j);
};

/// Decentralized controller: clamp(out_shift + out_scale * N(z), U).
struct ControllerNet {
    FeedForwardNet net;
    Vec shift;
    Vec scale;
    Vec out_shift;
    Vec out_scale;
    Interval bounds;  // U_i

    bool empty() const { return net.empty(); }
    int num_parameters() const { return net.num_parameters(); }

    Vec forward(const Vec& xbar) const;
    struct Trace {
        FeedForwardNet::Trace t;
        Vec raw;
    };
    Vec forward(const Vec& xbar, Trace& t) const;
    Vec backward(const Trace& t, const Vec& upstream, Vec* param_grad) const;

    Interval output_bounds(const Interval& box) const;
    /// Output enclosure and Jacobian enclosure (m x input).
    std::pair<Interval, IntervalMatrix> bounds_with_jacobian(const Interval& box) const;

    nlohmann::json to_json() const;
    static ControllerNet from_json(const nlohmann::json& j);
};

struct Slacks {
    double eps0 = 0.05;
    std::array<double, 5> eps{0.01, 0.01, 0.01, 0.01, 0.01};
    std::array<double, 3> sigma{1.0, 1.0, 1.0};

    void validate() const;
    nlohmann::json to_json() const;
    static Slacks from_json(const nlohmann::json& j);
};

/// Per-agent V_i, h_i, pi_i plus coupling matrices. Row i of Lambda holds
/// lambda_i, so the stacked Lyapunov condition reads V' <= Lambda V.
struct CoRwaCertificate {
    std::vector<int> active;  // 0 for exogenous agents (no networks)
    std::vector<ScalarCertificate> V;
    std::vector<ScalarCertificate> h;
    std::vector<ControllerNet> pi;
    Mat Lambda;
    Mat Upsilon;
    Slacks slacks;
    std::vector<double> eV;  // verification error margins
    std::vector<double> eh;

    int q() const { return static_cast<int>(V.size()); }
    bool is_active(int i) const { return active[i] != 0; }
    void validate() const;

    nlohmann::json to_json() const;
    static CoRwaCertificate from_json(const nlohmann::json& j);
};

// ------------------------------------------------------------ matrix algebra

bool check_metzler(const Mat& m, double tol = 1e-12);
/// All eigenvalue real parts < -1e-9. For Metzler input the M-matrix
/// leading-minor test must agree with the eigenvalues.
bool check_hurwitz(const Mat& m);
double spectral_abscissa(const Mat& m);

struct PositiveP {
    Vec p;
    Vec c;
    double c_min = 0.0;
    bool perron_fallback = false;
    double perturbation = 0.0;
};
/// p > 0 with p^T Lambda = -c^T, c > 0.
PositiveP solve_positive_p(const Mat& lambda);

Vec comparison_step(const Mat& m, const Vec& z, double T);

// ------------------------------------------------------------ residuals

/// Source of the state derivative: the true model or the surrogate.
struct DerivativeSource {
    const Scenario* scenario = nullptr;
    const SurrogateModel* surrogate = nullptr;  // null: true dynamics
};

/// Closed-loop controls at a joint state (exogenous agents use their schedule).
std::vector<Vec> closed_loop_controls(const CoRwaCertificate& cert, const Scenario& sc, const JointState& joint);
/// Closed-loop state derivative of every agent, masks from the current state (q x n).
Mat closed_loop_derivative(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint);

/// Certificate values V_i(x_i), h_i(xbar_i) stacked (zero for exogenous agents).
Vec lyapunov_vector(const CoRwaCertificate& cert, const JointState& joint);
Vec barrier_vector(const CoRwaCertificate& cert, const Scenario& sc, const JointState& joint);

/// grad V_i . x_i' - (lambda_i o A_i)^T V. <= 0 means the condition holds.
double clf_residual(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint, int i);
/// grad h_i . xbar_i' - (mu_i o A_i)^T h. >= 0 means the condition holds.
double cbf_residual(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint, int i);
/// One-step Euler quotients in place of the Lie derivatives.
double clf_residual_discrete(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint,
                             int i, double T);
double cbf_residual_discrete(const CoRwaCertificate& cert, const DerivativeSource& src, const JointState& joint,
                             int i, double T);

/// p^T V(x).
double scalar_lyapunov(const CoRwaCertificate& cert, const Vec& p, const JointState& joint);

}  // namespace corwa
