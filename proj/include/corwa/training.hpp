#pragma once

#include "corwa/certificate.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace corwa {

enum class RegionTag { interior, unsafe, goal, initial };

std::string to_string(RegionTag t);

struct Sample {
    Mat x;                      // joint state, q x n
    std::vector<RegionTag> tags;  // per agent
    std::vector<Vec> exo;         // controls of exogenous agents (empty for the others)
    double weight = 1.0;
    std::string origin;  // violated condition, for samples added from counterexamples
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::size_t size() const { return train.size() + validation.size(); }
};

struct TrainingConfig {
    Slacks slacks;
    double learning_rate = 1e-3;
    double decay = 0.5;
    int decay_every = 20;
    int epochs = 50;
    int batch_size = 32;
    int dataset_size = 30000;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    bool adam = false;
    double dt = 0.0;  // 0: use the scenario step

    double unsafe_fraction = 0.15;    // per agent, forced draw from the unsafe set
    double boundary_fraction = 0.15;  // per agent, draw near a set
    double boundary_noise = 0.05;     // relative to the domain width
    double counterexample_weight = 5.0;

    std::vector<int> v_hidden{16, 16};
    std::vector<int> h_hidden{16, 16};
    std::vector<int> pi_hidden{32, 32};
    Activation pi_activation = Activation::tanh;
    int pretrain_epochs = 30;
    double pretrain_learning_rate = 1e-2;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

struct LossTerms {
    double ctrl = 0.0;
    double clf = 0.0;
    double cbf = 0.0;
    double total = 0.0;
};

/// Flat view of every trainable quantity: per active agent the V, h, pi
/// parameters, then the raw coupling parameters of Lambda and Upsilon.
class ParameterMap {
public:
    ParameterMap(const CoRwaCertificate& cert, const Scenario& sc);

    int size() const { return total_; }
    Vec get(const CoRwaCertificate& cert) const;
    void set(CoRwaCertificate& cert, const Vec& p) const;

    int v_offset(int i) const { return v_off_[i]; }
    int h_offset(int i) const { return h_off_[i]; }
    int pi_offset(int i) const { return pi_off_[i]; }
    int lambda_offset() const { return lam_off_; }
    int upsilon_offset() const { return ups_off_; }
    /// 1 where the coupling entry is trained.
    const Mat& lambda_free() const { return lam_free_; }
    const Mat& upsilon_free() const { return ups_free_; }

private:
    std::vector<int> v_off_, h_off_, pi_off_;
    int lam_off_ = 0, ups_off_ = 0, total_ = 0;
    Mat lam_free_, ups_free_;
};

/// Loss of a batch and, if grad is non-null, its gradient with respect to ParameterMap order.
LossTerms loss_terms(const CoRwaCertificate& cert, const Scenario& sc, const std::vector<const Sample*>& batch,
                     const TrainingConfig& cfg, Vec* grad = nullptr, const ParameterMap* map = nullptr);
LossTerms loss_terms(const CoRwaCertificate& cert, const Scenario& sc, const std::vector<Sample>& batch,
                     const TrainingConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    LossTerms train;
    double val_total = 0.0;
};

struct TrainingResult {
    std::vector<EpochRecord> curve;
    int projections = 0;  // epochs after which Lambda needed diagonal inflation
};

TrainingResult train_round(CoRwaCertificate& cert, const Scenario& sc, const Dataset& data,
                           const TrainingConfig& cfg);

/// Makes Lambda Metzler and Hurwitz, Upsilon Metzler. Returns true if Lambda changed.
bool project_coupling(CoRwaCertificate& cert, const Scenario& sc);

Dataset sample_dataset(const Scenario& sc, const TrainingConfig& cfg);
/// Per-agent tags at a joint state, priority unsafe > initial > goal > interior.
std::vector<RegionTag> region_tags(const Scenario& sc, const Mat& x);
/// Unsafe tags as a fraction of all tags of active agents.
double unsafe_fraction(const Dataset& data, const Scenario& sc);

/// Fresh certificate: V fitted to a quadratic Lyapunov function of the
/// linearized nominal loop, h random, pi pretrained on the nominal controller.
CoRwaCertificate initialize_certificate(const Scenario& sc, const TrainingConfig& cfg, const Dataset* data = nullptr);
/// Imitation-only fit of the controllers; returns the final mean squared error.
double pretrain_controllers(CoRwaCertificate& cert, const Scenario& sc, const Dataset& data,
                            const TrainingConfig& cfg);

/// Symmetric P with A^T P + P A = -I, or nullopt when A is not Hurwitz.
std::optional<Mat> lyapunov_matrix(const Mat& a);

struct RobotField {
    Vec target;               // goal position of this agent when tracking (leader)
    int leader = -1;          // formation reference, -1: track target
    Vec offset;               // formation offset relative to the leader
    std::vector<Vec> obstacle_centers;
    std::vector<double> obstacle_radii;
    double k_target = 0.8;
    double k_form = 0.8;
    double k_obs = 6.0;
    double k_agent = 1.2;
    double d_obs = 2.5;
    double d_agent = 0.1;
    double k_heading = 1.0;
    double max_speed = 1.0;
    double max_wheel = 40.0;
    RobotParams robot;
};

/// Potential-field velocity mapped to wheel speeds through g_i^{-1}, after the
/// interaction drift is cancelled.
Vec nominal_robot_controller(const JointState& joint, const SystemTopology& topo, int i, const RobotField& field);

struct PlatoonGains {
    double k_s = 0.45;
    double k_v = 0.5;
    double spacing = 20.0;
    double u_max = 5.0;
};

Vec nominal_platoon_controller(const JointState& joint, int i, const PlatoonGains& gains = {});

}  // namespace corwa
