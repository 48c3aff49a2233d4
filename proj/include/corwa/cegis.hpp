#pragma once

#include "corwa/lipschitz.hpp"
#include "corwa/training.hpp"
#include "corwa/verifier.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace corwa {

struct CegisConfig {
    int max_iterations = 100;
    int variants = 20;           // perturbed copies per witness
    double noise_scale = 0.01;   // fraction of each domain width
    bool use_margins = true;     // false: verify with zero error margins
    bool augment_unresolved = true;  // open boxes feed training when no witness was found
    TrainingConfig training;
    VerifierConfig verifier;
    LipschitzOptions lipschitz;
    SurrogateConfig surrogate;
    std::string checkpoint_dir;  // empty: no checkpoints
    double max_seconds = 0.0;    // wall-clock cap checked after each pass, 0: none

    void validate() const;
    nlohmann::json to_json() const;
    static CegisConfig from_json(const nlohmann::json& j);
};

nlohmann::json surrogate_config_to_json(const SurrogateConfig& c);
SurrogateConfig surrogate_config_from_json(const nlohmann::json& j);
nlohmann::json lipschitz_options_to_json(const LipschitzOptions& o);
LipschitzOptions lipschitz_options_from_json(const nlohmann::json& j);

enum class CegisStatus { certified_converged, iteration_budget_exhausted };
std::string to_string(CegisStatus s);

struct IterationRecord {
    int iteration = 0;
    VerificationStatus verdict = VerificationStatus::unknown;
    int queries = 0;
    int verified = 0;
    int counterexamples = 0;  // witnesses returned
    int unknown = 0;          // queries left open
    double max_eV = 0.0;
    double max_eh = 0.0;
    double verify_seconds = 0.0;
    bool trained = false;
    LossTerms loss;  // last training epoch
    double val_loss = 0.0;
    double train_seconds = 0.0;
    std::size_t dataset_size = 0;

    nlohmann::json to_json() const;
};

struct CegisReport {
    CegisStatus status = CegisStatus::iteration_budget_exhausted;
    int iterations = 0;  // training rounds run
    bool timed_out = false;
    int verification_passes = 0;
    std::vector<IterationRecord> records;  // one per verification pass
    VerificationReport final_verification;
    double seconds = 0.0;

    nlohmann::json to_json() const;
    std::string summary_table() const;
};

/// Replaceable pieces, for tests and the CLI.
struct CegisHooks {
    std::function<VerificationReport(const CoRwaCertificate&)> verify;  // default: verify_all on the surrogate
    std::function<void(const IterationRecord&, const CoRwaCertificate&)> on_iteration;
};

/// Fills cert.eV, cert.eh for verification step cfg.verifier.T (zero when
/// margins are disabled).
void assign_margins(const Scenario& sc, CoRwaCertificate& cert, const SurrogateModel& surrogate,
                    const CegisConfig& cfg);

/// Appends each witness and `variants` Gaussian perturbations of it (clipped
/// to the state domains) to the training split. Deterministic given seed.
void augment_counterexamples(Dataset& data, const Scenario& sc, const std::vector<Witness>& witnesses,
                             const CegisConfig& cfg, std::uint64_t seed);
/// Counterexample weights halve each round, never below 1.
void decay_counterexample_weights(Dataset& data);

/// Alternates verification and training on `cert` (warm start) until every
/// query is Verified or max_iterations training rounds have run.
CegisReport run_cegis(const Scenario& sc, CoRwaCertificate& cert, Dataset& data, const SurrogateModel& surrogate,
                      const CegisConfig& cfg, const CegisHooks& hooks = {});

}  // namespace corwa
