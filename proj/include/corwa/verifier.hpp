#pragma once

#include "corwa/certificate.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace corwa {

/// Each condition is written as residual <= 0 (strictly < 0 for barrier_unsafe_negative):
///   lyap_decrement          (V(x+TF) - V(x))/T - (lambda o A)^T V + eV   outside the goal
///   barrier_increment       -((h(xbar+TF) - h(xbar))/T - (mu o A)^T h) + eh
///   lyap_positive           -V(x)
///   barrier_safe_positive   eps0 - h(xbar)   on initial and goal states
///   barrier_unsafe_negative h(xbar)          on unsafe states
enum class ConditionTag { lyap_decrement, barrier_increment, lyap_positive, barrier_safe_positive, barrier_unsafe_negative };

std::string to_string(ConditionTag t);
ConditionTag condition_from_string(const std::string& s);
const std::vector<ConditionTag>& all_conditions();

enum class VerificationStatus { verified, counterexample, unknown };
std::string to_string(VerificationStatus s);

enum class SplitRule { widest, best };

struct VerificationBudget {
    int max_depth = 20;
    long long max_boxes = 100000;
    double max_seconds = 0.0;  // 0: no wall-clock limit
    int max_witnesses = 1;
    SplitRule split = SplitRule::widest;

    VerificationBudget doubled() const;
    nlohmann::json to_json() const;
    static VerificationBudget from_json(const nlohmann::json& j);
};

/// One condition of one agent under one neighbor pattern. `box` covers the
/// own row followed by the pattern's rows (nearest first), n entries each.
struct VerificationQuery {
    int agent = 0;
    ConditionTag tag = ConditionTag::lyap_decrement;
    std::vector<int> pattern;
    Interval box;
    double margin = 0.0;
    double T = 0.1;
    VerificationBudget budget;
    bool centered = true;  // also use the mean value form and keep the tighter bound

    nlohmann::json to_json() const;
};

struct Witness {
    JointState joint;
    int agent = 0;
    ConditionTag tag = ConditionTag::lyap_decrement;
    double residual = 0.0;
};

struct VerificationOutcome {
    VerificationQuery query;
    VerificationStatus status = VerificationStatus::unknown;
    std::vector<Witness> witnesses;
    std::vector<JointState> unresolved;  // centers of boxes left open (capped)
    long long boxes = 0;
    int depth = 0;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// Problem data shared by every query.
struct VerifierContext {
    const Scenario* scenario = nullptr;
    const CoRwaCertificate* cert = nullptr;
    const SurrogateModel* surrogate = nullptr;
};

/// Sound enclosure of the residual over a sub-box of the query.
Range condition_residual_bound(const VerificationQuery& query, const VerifierContext& ctx, const Interval& box);
inline Range condition_residual_bound(const VerificationQuery& query, const VerifierContext& ctx) {
    return condition_residual_bound(query, ctx, query.box);
}

/// True when every state of the box could carry the query's neighbor pattern;
/// false only if none can. Neighbor position rows are clipped in place.
bool tighten_to_pattern(const SystemTopology& topo, const std::vector<Interval>& domains, int i,
                        const std::vector<int>& pattern, Interval& box);

/// Joint state realizing `point` with exactly the query's pattern, or nullopt.
std::optional<JointState> realize(const VerificationQuery& query, const VerifierContext& ctx, const Vec& point);
/// Exact residual at a joint state (masks from the state itself), or nullopt
/// when the condition does not apply there.
std::optional<double> concrete_residual(const VerificationQuery& query, const VerifierContext& ctx,
                                        const JointState& joint);
bool violates(ConditionTag tag, double residual);

VerificationOutcome verify_box(const VerificationQuery& query, const VerifierContext& ctx);

/// Ordered neighbor lists agent i can have somewhere in the domain.
std::vector<std::vector<int>> feasible_patterns(const SystemTopology& topo, int i, const std::vector<Interval>& domains);

struct VerifierConfig {
    double T = 0.0;  // 0: scenario step
    VerificationBudget budget;
    bool retry_unknown = true;  // one rerun with a doubled budget
    bool centered = true;
    std::vector<ConditionTag> conditions = all_conditions();

    nlohmann::json to_json() const;
    static VerifierConfig from_json(const nlohmann::json& j);
};

std::vector<VerificationQuery> agent_queries(const VerifierContext& ctx, int i, const VerifierConfig& cfg);

struct AgentVerification {
    int agent = 0;
    VerificationStatus verdict = VerificationStatus::verified;
    std::vector<VerificationOutcome> outcomes;
};

struct VerificationReport {
    std::vector<AgentVerification> agents;
    VerificationStatus verdict = VerificationStatus::verified;
    double seconds = 0.0;

    std::vector<Witness> witnesses() const;
    std::vector<JointState> unresolved() const;
    nlohmann::json to_json() const;
};

/// Counterexample dominates Unknown dominates Verified.
VerificationStatus combine(VerificationStatus a, VerificationStatus b);

AgentVerification verify_agent(const VerifierContext& ctx, int i, const VerifierConfig& cfg);
/// Every active agent, queries run in parallel.
VerificationReport verify_all(const VerifierContext& ctx, const VerifierConfig& cfg);

}  // namespace corwa
