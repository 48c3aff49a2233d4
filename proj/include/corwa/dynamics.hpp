#pragma once

#include "corwa/network.hpp"
#include "corwa/topology.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace corwa {

/// Control-affine local dynamics x_i' = f(xbar) + g(xbar) u of one agent.
/// xbar is the extended state (M_i x n); rows at or beyond valid_rows are padding.
class AgentDynamics {
public:
    virtual ~AgentDynamics() = default;
    virtual std::string tag() const = 0;
    virtual int state_dim() const = 0;
    virtual int control_dim() const = 0;
    virtual Vec drift(const Mat& xbar, int valid_rows) const = 0;
    virtual Mat input_matrix(const Mat& xbar, int valid_rows) const = 0;
    /// Constants that identify the model (hashed for transfer matching).
    virtual nlohmann::json params() const = 0;
    /// Enclosure of d(f + g u)/d(xbar, u) over a box, columns = flattened xbar then u.
    /// Empty when no closed form is available.
    virtual std::optional<IntervalMatrix> jacobian_bounds(const Interval& /*xbar*/, int /*valid_rows*/,
                                                          const Interval& /*u*/) const {
        return std::nullopt;
    }
    /// f + g u is jointly affine in (xbar, u), so jacobian_bounds is exact and constant.
    virtual bool affine() const { return false; }

    Vec derivative(const Mat& xbar, int valid_rows, const Vec& u) const;
};

/// f = A * flat(xbar) + c, g = B. A may read every extended-state entry.
class LinearDynamics : public AgentDynamics {
public:
    LinearDynamics(Mat a, Vec c, Mat b, std::string tag = "linear");
    std::string tag() const override { return tag_; }
    int state_dim() const override { return static_cast<int>(a_.rows()); }
    int control_dim() const override { return static_cast<int>(b_.cols()); }
    Vec drift(const Mat& xbar, int valid_rows) const override;
    Mat input_matrix(const Mat& xbar, int valid_rows) const override;
    nlohmann::json params() const override;
    std::optional<IntervalMatrix> jacobian_bounds(const Interval& xbar, int valid_rows,
                                                  const Interval& u) const override;
    bool affine() const override { return true; }

    const Mat& a() const { return a_; }
    const Mat& b() const { return b_; }
    const Vec& c() const { return c_; }

private:
    Mat a_;
    Vec c_;
    Mat b_;
    std::string tag_;
};

struct RobotParams {
    double k = 0.1;            // interaction gain
    double eps = 0.1;          // interaction offset
    double wheel_radius = 0.02;
    double wheel_offset = 0.2;  // L
};

/// Omnidirectional three-wheel robot, state (x1, x2, heading), input wheel speeds.
class RobotDynamics : public AgentDynamics {
public:
    explicit RobotDynamics(RobotParams p);
    std::string tag() const override { return "robot"; }
    int state_dim() const override { return 3; }
    int control_dim() const override { return 3; }
    Vec drift(const Mat& xbar, int valid_rows) const override;
    Mat input_matrix(const Mat& xbar, int valid_rows) const override;
    nlohmann::json params() const override;

    const RobotParams& robot_params() const { return p_; }
    /// Fixed wheel geometry matrix J.
    Mat wheel_geometry() const;

private:
    RobotParams p_;
    Mat body_map_;  // (J^T)^{-1} r I
};

/// g_i(heading) = Rot(heading) (J^T)^{-1} r I.
Mat robot_input_matrix(double heading, double wheel_radius, double wheel_offset);
/// Pairwise interaction drift of agent i over its current neighbor set.
Vec robot_drift(const JointState& joint, const SystemTopology& topo, int i, double k, double eps);

/// Follower: state (spacing, speed); s' = v_pred - v, v' = u. The predecessor
/// is extended-state row 1.
class PlatoonFollowerDynamics : public AgentDynamics {
public:
    std::string tag() const override { return "platoon_follower"; }
    int state_dim() const override { return 2; }
    int control_dim() const override { return 1; }
    Vec drift(const Mat& xbar, int valid_rows) const override;
    Mat input_matrix(const Mat& xbar, int valid_rows) const override;
    nlohmann::json params() const override { return nlohmann::json::object(); }
    std::optional<IntervalMatrix> jacobian_bounds(const Interval& xbar, int valid_rows,
                                                  const Interval& u) const override;
    bool affine() const override { return true; }
};

/// Leader: spacing unused, v' = u with u supplied by a schedule.
class PlatoonLeaderDynamics : public AgentDynamics {
public:
    std::string tag() const override { return "platoon_leader"; }
    int state_dim() const override { return 2; }
    int control_dim() const override { return 1; }
    Vec drift(const Mat& xbar, int valid_rows) const override;
    Mat input_matrix(const Mat& xbar, int valid_rows) const override;
    nlohmann::json params() const override { return nlohmann::json::object(); }
    std::optional<IntervalMatrix> jacobian_bounds(const Interval& xbar, int valid_rows,
                                                  const Interval& u) const override;
    bool affine() const override { return true; }
};

/// (s_i', v_i') for follower i given its control.
Vec platoon_derivative(const JointState& joint, int i, double u);

struct DynamicsModel {
    std::vector<std::shared_ptr<const AgentDynamics>> agents;
    std::vector<Interval> control_bounds;  // U_i
    std::vector<Interval> state_domain;    // X_i, own state

    int q() const { return static_cast<int>(agents.size()); }
    void validate(const SystemTopology& topo) const;
};

struct StepResult {
    JointState next;
    std::vector<int> clipped;  // per agent: 1 if its control was clipped
};

/// Forward Euler with masks frozen at the current state. Controls outside U are clipped.
StepResult euler_step(const DynamicsModel& model, const SystemTopology& topo, const JointState& joint,
                      const std::vector<Vec>& controls, double T);

Vec clip_to(const Interval& box, const Vec& u, bool* clipped = nullptr);

/// Neural approximation of one agent's f and g; one pair per valid-row count.
struct AgentSurrogate {
    int n = 0;
    int m = 0;
    int max_rows = 1;
    std::vector<FeedForwardNet> f;  // index valid_rows - 1, input M*n, output n
    std::vector<FeedForwardNet> g;  // output n*m, row-major
    double eps_hat = 0.0;
    Vec grid_step;

    Vec derivative(const Vec& xbar, int valid_rows, const Vec& u) const;
    Interval derivative_bounds(const Interval& xbar, int valid_rows, const Interval& u) const;
    nlohmann::json to_json() const;
    static AgentSurrogate from_json(const nlohmann::json& j);
};

struct SurrogateModel {
    std::vector<AgentSurrogate> agents;
    double eps_hat(int i) const { return agents[i].eps_hat; }
    nlohmann::json to_json() const;
    static SurrogateModel from_json(const nlohmann::json& j);
};

struct SurrogateConfig {
    std::vector<int> hidden;  // empty: single affine layer fitted by least squares
    Activation activation = Activation::tanh;
    int points_per_dim = 5;
    int max_grid_points = 200000;
    int epochs = 200;
    double learning_rate = 1e-2;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

/// Fits f, g on a rectangular grid over the extended-state domain and reports
/// the grid maximum of |F - F~| over the vertices of U (F is affine in u).
AgentSurrogate fit_surrogate(const AgentDynamics& dyn, const SystemTopology& topo, int i,
                             const std::vector<Interval>& domains, const Interval& control_bounds,
                             const SurrogateConfig& cfg);
/// Grid maximum of |F - F~| for an arbitrary surrogate.
double surrogate_error(const AgentDynamics& dyn, const AgentSurrogate& s, const SystemTopology& topo, int i,
                       const std::vector<Interval>& domains, const Interval& control_bounds, int points_per_dim,
                       int max_points = 200000);
SurrogateModel fit_surrogates(const DynamicsModel& model, const SystemTopology& topo, const SurrogateConfig& cfg);

/// Extended-state box: own domain in row 0, neighbor domains (or zeros) after.
Interval extended_domain(const SystemTopology& topo, int i, const std::vector<Interval>& domains,
                         const std::vector<int>& neighbors);

/// Network input box of agent i: own domain in row 0, every other row over the
/// hull of the communicable agents' domains and the zero padding.
Interval neighborhood_box(const SystemTopology& topo, int i, const std::vector<Interval>& domains);

/// Euclidean operator-norm bound for any matrix in an interval matrix.
double norm_upper(const IntervalMatrix& m);

}  // namespace corwa
