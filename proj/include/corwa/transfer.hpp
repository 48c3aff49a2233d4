#pragma once

#include "corwa/cegis.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace corwa {

std::uint64_t fnv1a(const std::string& bytes);

/// What an agent must share with its image: dynamics family and constants,
/// control and state boxes, neighborhood template.
struct AgentSignature {
    std::string tag;
    std::uint64_t hash = 0;
    int M = 1;
    double R = 0.0;
    bool exogenous = false;

    bool same_label(const AgentSignature& o) const;
    nlohmann::json to_json() const;
    static AgentSignature from_json(const nlohmann::json& j);
};

struct SystemSignature {
    std::vector<AgentSignature> agents;
    std::vector<std::vector<int>> communicable;  // sorted

    static SystemSignature of(const Scenario& sc);
    int q() const { return static_cast<int>(agents.size()); }
    void validate() const;
    /// Label plus the multiset of communicable labels.
    std::string role(int i) const;

    nlohmann::json to_json() const;
    static SystemSignature from_json(const nlohmann::json& j);
};

struct Embedding {
    std::vector<int> tau;  // small id -> large id

    /// Large id -> small id, -1 for agents outside the image.
    std::vector<int> inverse(int large_q) const;
    nlohmann::json to_json() const { return {{"tau", tau}}; }
};

/// Injective, label-preserving, and comm_large(tau(j)) == tau(comm_small(j)).
bool is_embedding(const SystemSignature& small, const SystemSignature& large, const Embedding& e);

/// Lexicographically smallest embedding, or nullopt.
std::optional<Embedding> find_embedding(const SystemSignature& small, const SystemSignature& large);

/// Small agent whose networks each large agent reuses: the preimage on the
/// image of the embedding, otherwise the largest small id with the same role.
std::vector<int> template_classes(const SystemSignature& small, const SystemSignature& large, const Embedding& e);

/// Copies networks and margins by template class and tiles Lambda, Upsilon
/// over the communicable structure. Throws TransferRejected when the tiled
/// Lambda is not Metzler and Hurwitz, or Upsilon not Metzler.
CoRwaCertificate transfer_certificate(const CoRwaCertificate& cert, const SystemSignature& small,
                                      const SystemSignature& large, const Embedding& e);
SurrogateModel transfer_surrogate(const SurrogateModel& s, const SystemSignature& small,
                                  const SystemSignature& large, const Embedding& e);

/// Joint state of the large system whose image rows equal the small state.
Mat embed_state(const Mat& small_x, const Mat& large_background, const Embedding& e);

/// Largest |r_large - r_small| over image agents for the continuous and
/// one-step residuals at the embedded state.
double residual_gap(const CoRwaCertificate& small_cert, const Scenario& small_sc,
                    const CoRwaCertificate& large_cert, const Scenario& large_sc, const Embedding& e,
                    const JointState& small_joint, const Mat& large_background);

struct RedVerConfig {
    std::vector<int> sizes{3, 6, 30};
    CegisConfig cegis;
    VerifierConfig spot_verifier;
    int spot_agents = 3;
    int residual_samples = 100;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static RedVerConfig from_json(const nlohmann::json& j);
};

struct RedVerRow {
    int size = 0;
    int agents = 0;
    double train_seconds = 0.0;
    double transfer_seconds = 0.0;  // signature, embedding, certificate and surrogate tiling
    double spot_seconds = 0.0;
    VerificationStatus spot_check = VerificationStatus::unknown;
    std::vector<int> spot_agent_ids;
    double max_residual_gap = 0.0;
    Embedding embedding;
};

struct RedVerReport {
    int training_runs = 0;
    CegisReport training;
    std::vector<RedVerRow> rows;
    std::vector<CoRwaCertificate> certificates;  // per size

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

using ScenarioFamily = std::function<Scenario(int size)>;

struct RedVerHooks {
    /// Replaces the default CEGIS run at the smallest size.
    std::function<CegisReport(const Scenario&, CoRwaCertificate&, Dataset&, const SurrogateModel&)> train;
};

/// Trains once at the smallest size, then transfers to every size and
/// spot-checks a sample of agents.
RedVerReport red_ver(const ScenarioFamily& family, const RedVerConfig& cfg, const RedVerHooks& hooks = {});

}  // namespace corwa
